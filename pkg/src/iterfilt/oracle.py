"""Exact linear-Gaussian reference: Kalman likelihood, finite-difference
score, and a deliberately simple derivative-free optimizer.

These are the ground-truth implementations the test and acceptance
suites compare the Monte Carlo engine against; nothing here touches the
particle code paths.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import IterfiltError, ObservationSeries, ParamTransform

__all__ = [
    "LgssSpec",
    "ParamBinding",
    "KalmanResult",
    "OptimizeResult",
    "bind_params",
    "kalman_filter",
    "kalman_loglik",
    "kalman_score",
    "reference_optimize",
]


class SingularInnovationError(IterfiltError):
    """An innovation covariance in the Kalman recursion was singular."""


def _symmetric_psd(name, mat):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    mat = (mat + mat.T) / 2.0
    if np.any(np.linalg.eigvalsh(mat) < -1e-10 * max(1.0, np.trace(mat))):
        raise ValueError(f"{name} must be positive semidefinite")
    return mat


@dataclass(frozen=True)
class LgssSpec:
    """Linear-Gaussian state-space model.

    x_n = A x_{n-1} + w_n,  w_n ~ N(0, Q)
    y_n = H x_n + v_n,      v_n ~ N(0, R)
    x_0 ~ N(m0, P0)
    """

    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        Q = _symmetric_psd("Q", self.Q)
        R = _symmetric_psd("R", self.R)
        P0 = _symmetric_psd("P0", self.P0)
        m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        d_x = A.shape[0]
        if A.shape != (d_x, d_x) or Q.shape != (d_x, d_x) or P0.shape != (d_x, d_x):
            raise ValueError("A, Q, P0 must all be d_x by d_x")
        if m0.shape != (d_x,):
            raise ValueError("m0 must have length d_x")
        if H.shape[1] != d_x or R.shape != (H.shape[0], H.shape[0]):
            raise ValueError("H must be d_y by d_x and R d_y by d_y")
        for name, arr in (("A", A), ("Q", Q), ("H", H), ("R", R), ("m0", m0), ("P0", P0)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "P0", P0)

    @property
    def dim_state(self) -> int:
        return int(self.A.shape[0])

    @property
    def dim_obs(self) -> int:
        return int(self.H.shape[0])


@dataclass(frozen=True)
class ParamBinding:
    """Binds a named parameter to one entry of an LGSS matrix.

    ``matrix`` is one of "A", "Q", "H", "R", "m0", "P0"; symmetric
    matrices get the mirrored entry set as well.
    """

    name: str
    matrix: str
    row: int
    col: int = 0

    def __post_init__(self):
        if self.matrix not in ("A", "Q", "H", "R", "m0", "P0"):
            raise ValueError(f"unknown matrix {self.matrix!r}")


def bind_params(spec: LgssSpec, bindings, theta_nat) -> LgssSpec:
    """Return a copy of spec with bound entries set to natural-scale values."""
    theta_nat = np.asarray(theta_nat, dtype=float)
    if theta_nat.shape != (len(bindings),):
        raise ValueError("one parameter value per binding required")
    updates: dict[str, np.ndarray] = {}
    for binding, value in zip(bindings, theta_nat):
        mat = updates.get(binding.matrix)
        if mat is None:
            mat = np.array(getattr(spec, binding.matrix), copy=True)
            updates[binding.matrix] = mat
        if binding.matrix == "m0":
            mat[binding.row] = value
        else:
            mat[binding.row, binding.col] = value
            if binding.matrix in ("Q", "R", "P0") and binding.row != binding.col:
                mat[binding.col, binding.row] = value
    return replace(spec, **updates)


@dataclass(frozen=True)
class KalmanResult:
    loglik: float
    pred_means: np.ndarray
    pred_covs: np.ndarray
    filt_means: np.ndarray
    filt_covs: np.ndarray


def kalman_filter(spec: LgssSpec, data: ObservationSeries) -> KalmanResult:
    """Exact filtering recursion; loglik is the sum of innovation densities.

    Missing observations skip the update (likelihood factor one).
    """
    if data.dim_obs != spec.dim_obs:
        raise ValueError(
            f"data dimension {data.dim_obs} does not match model dim_obs {spec.dim_obs}"
        )
    n_obs = data.n_obs
    d_x = spec.dim_state
    m, P = spec.m0, spec.P0
    loglik = 0.0
    pred_means = np.empty((n_obs, d_x))
    pred_covs = np.empty((n_obs, d_x, d_x))
    filt_means = np.empty((n_obs, d_x))
    filt_covs = np.empty((n_obs, d_x, d_x))
    for n in range(n_obs):
        m = spec.A @ m
        P = spec.A @ P @ spec.A.T + spec.Q
        P = (P + P.T) / 2.0
        pred_means[n] = m
        pred_covs[n] = P
        if not data.is_missing(n + 1):
            y = data.values[n]
            S = spec.H @ P @ spec.H.T + spec.R
            S = (S + S.T) / 2.0
            sign, logdet = np.linalg.slogdet(S)
            if sign <= 0 or np.linalg.cond(S) > 1e14:
                raise SingularInnovationError(
                    f"singular innovation covariance at step {n + 1}"
                )
            e = y - spec.H @ m
            solve_e = np.linalg.solve(S, e)
            loglik += -0.5 * (spec.dim_obs * np.log(2 * np.pi) + logdet + e @ solve_e)
            K = P @ spec.H.T @ np.linalg.inv(S)
            m = m + K @ e
            P = P - K @ spec.H @ P
            P = (P + P.T) / 2.0
        filt_means[n] = m
        filt_covs[n] = P
    return KalmanResult(
        loglik=float(loglik),
        pred_means=pred_means,
        pred_covs=pred_covs,
        filt_means=filt_means,
        filt_covs=filt_covs,
    )


def kalman_loglik(spec: LgssSpec, data: ObservationSeries) -> float:
    return kalman_filter(spec, data).loglik


def kalman_score(
    spec: LgssSpec,
    data: ObservationSeries,
    bindings,
    transform: ParamTransform | None = None,
    step_scale: float = 1e-5,
    return_diagnostics: bool = False,
):
    """Central-difference gradient of the exact log-likelihood.

    Differentiates with respect to the bound parameters on the
    unconstrained scale defined by ``transform`` (identity when None),
    at the values currently stored in ``spec``.  Uses step
    h = step_scale * (1 + |theta|) per coordinate and cross-checks
    against the half-step estimate; a relative disagreement above 1e-6
    triggers a warning.  Returns the half-step estimate (and the
    per-coordinate relative disagreement when ``return_diagnostics``).
    """
    names = [b.name for b in bindings]
    if transform is None:
        transform = ParamTransform.identity(names)
    if tuple(transform.names) != tuple(names):
        raise ValueError("transform names must match binding names, in order")
    theta_nat = np.array(
        [
            getattr(spec, b.matrix)[b.row] if b.matrix == "m0" else getattr(spec, b.matrix)[b.row, b.col]
            for b in bindings
        ]
    )
    theta_unc = transform.to_unconstrained(theta_nat)

    def loglik_at(theta):
        return kalman_loglik(bind_params(spec, bindings, transform.to_natural(theta)), data)

    def central(h_vec):
        grad = np.empty(len(bindings))
        for i, h in enumerate(h_vec):
            up = theta_unc.copy()
            dn = theta_unc.copy()
            up[i] += h
            dn[i] -= h
            grad[i] = (loglik_at(up) - loglik_at(dn)) / (2 * h)
        return grad

    h = step_scale * (1.0 + np.abs(theta_unc))
    coarse = central(h)
    fine = central(h / 2)
    rel = np.abs(coarse - fine) / (1.0 + np.abs(fine))
    if np.any(rel > 1e-6):
        warnings.warn(
            f"finite-difference step-halving check failed (max relative "
            f"disagreement {rel.max():.3g}); the score may be inaccurate",
            stacklevel=2,
        )
    if return_diagnostics:
        return fine, rel
    return fine


@dataclass(frozen=True)
class OptimizeResult:
    theta: np.ndarray
    value: float
    n_evaluations: int
    converged: bool


def reference_optimize(
    objective,
    theta_start,
    bounds=None,
    initial_step: float = 0.25,
    step_tol: float = 1e-8,
    max_evaluations: int = 100_000,
) -> OptimizeResult:
    """Maximize a smooth objective by coordinate search with shrinking steps.

    Intentionally unsophisticated: cycle through coordinates, move while
    the objective improves, halve the step after a sweep with no
    improvement, stop once the step drops below ``step_tol``.  ``bounds``
    is an optional list of (lo, hi) per coordinate; candidates are
    clipped into the box.  Exceeding ``max_evaluations`` returns the
    best point found with a warning.
    """
    theta = np.array(theta_start, dtype=float)
    d = theta.size
    if bounds is not None:
        lo = np.array([b[0] for b in bounds], dtype=float)
        hi = np.array([b[1] for b in bounds], dtype=float)
        theta = np.clip(theta, lo, hi)
    best = float(objective(theta))
    evals = 1
    step = float(initial_step)
    capped = False
    while not capped:
        improved = False
        for i in range(d):
            for direction in (1.0, -1.0):
                while evals < max_evaluations:
                    cand = theta.copy()
                    cand[i] += direction * step
                    if bounds is not None:
                        cand = np.clip(cand, lo, hi)
                    if np.array_equal(cand, theta):
                        break
                    val = float(objective(cand))
                    evals += 1
                    if val > best:
                        theta, best = cand, val
                        improved = True
                    else:
                        break
                else:
                    capped = True
        if not improved and not capped:
            step /= 2.0
            if step < step_tol:
                return OptimizeResult(theta=theta, value=best, n_evaluations=evals, converged=True)
    warnings.warn(
        f"coordinate search hit the {max_evaluations}-evaluation cap before "
        f"reaching step_tol={step_tol:g}; returning best point found",
        stacklevel=2,
    )
    return OptimizeResult(theta=theta, value=best, n_evaluations=evals, converged=False)
