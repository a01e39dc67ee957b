"""Truncated-normal random-walk perturbations and the extended model.

The perturbation kernel is a mean-zero multivariate normal with scale
matrix sigma_matrix, radially truncated at a fixed Mahalanobis radius and
renormalized.  :func:`extend_model` augments a base model's state with a
randomly walking copy of the parameter vector: the walk is refreshed
independently of the state at every observation interval, state
transitions use the pre-step parameter values, and the measurement
density uses the post-step values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.stats import chi2

from .core import ModelSpec, RngStream, check_unconstrained

__all__ = [
    "KernelSpec",
    "PerturbationScales",
    "ExtendedModel",
    "kernel_sample",
    "kernel_density",
    "extend_model",
]

_MAX_REJECTION_ROUNDS = 100


@dataclass(frozen=True)
class KernelSpec:
    """Scale matrix and truncation radius of the perturbation kernel.

    ``truncation_radius`` is measured in Mahalanobis standard
    deviations; the kernel density is exactly zero outside that radius
    and strictly positive inside.  The default radius of 6 makes the
    truncation correction negligible next to Monte Carlo noise.
    """

    scale_matrix: np.ndarray
    truncation_radius: float = 6.0

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.scale_matrix, dtype=float))
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("scale matrix must be square")
        if not np.all(np.isfinite(mat)):
            raise ValueError("scale matrix must be finite")
        if not np.allclose(mat, mat.T, rtol=1e-12, atol=0):
            raise ValueError("scale matrix must be symmetric")
        mat = (mat + mat.T) / 2.0
        if np.any(np.linalg.eigvalsh(mat) <= 0):
            raise ValueError("scale matrix must be positive definite")
        if not self.truncation_radius > 0:
            raise ValueError("truncation radius must be positive")
        mat.setflags(write=False)
        object.__setattr__(self, "scale_matrix", mat)

    @property
    def dim(self) -> int:
        return int(self.scale_matrix.shape[0])

    @classmethod
    def diagonal(cls, diag, truncation_radius: float = 6.0) -> "KernelSpec":
        return cls(scale_matrix=np.diag(np.asarray(diag, dtype=float)),
                   truncation_radius=truncation_radius)

    @classmethod
    def identity(cls, dim: int, truncation_radius: float = 6.0) -> "KernelSpec":
        return cls(scale_matrix=np.eye(dim), truncation_radius=truncation_radius)


@dataclass(frozen=True)
class PerturbationScales:
    """Random-walk scale sigma (per step) and initial-spread scale tau."""

    sigma: float
    tau: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("sigma must be finite and >= 0")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError("tau must be finite and > 0")


def _standard_truncated_normal(dim, radius, gen, size):
    """Standard normal rows conditioned on |v| <= radius, by rejection.

    Draws everything in one shot and redraws only the rejected rows, so
    the common case (large radius, acceptance near one) costs a single
    vectorized draw.
    """
    r_sq = radius * radius
    out = gen.standard_normal((size, dim))
    need = np.flatnonzero(np.einsum("ij,ij->i", out, out) > r_sq)
    for _ in range(_MAX_REJECTION_ROUNDS):
        if need.size == 0:
            return out
        draw = gen.standard_normal((need.size, dim))
        out[need] = draw
        need = need[np.einsum("ij,ij->i", draw, draw) > r_sq]
    raise RuntimeError(
        f"kernel rejection sampling failed to accept after {_MAX_REJECTION_ROUNDS} rounds; "
        f"radius {radius} is too small"
    )


def kernel_sample(spec: KernelSpec, scale: float, gen: np.random.Generator, size: int = 1):
    """Draw perturbation rows from the truncated kernel at the given scale.

    The pre-truncation covariance is scale**2 * scale_matrix; draws never
    exceed the truncation radius in Mahalanobis distance.  scale == 0
    returns exact zeros.
    """
    if not (np.isfinite(scale) and scale >= 0):
        raise ValueError("scale must be finite and >= 0")
    if scale == 0.0:
        return np.zeros((size, spec.dim))
    v = _standard_truncated_normal(spec.dim, spec.truncation_radius, gen, size)
    chol = cholesky(spec.scale_matrix, lower=True)
    return scale * (v @ chol.T)


def kernel_density(spec: KernelSpec, scale: float, u):
    """Normalized density of the truncated kernel at perturbation(s) u.

    Integrates to one; exactly zero outside the truncation ball.
    Accepts a single vector (returns a float) or a batch of rows.
    """
    if not (np.isfinite(scale) and scale > 0):
        raise ValueError("scale must be finite and > 0 for density evaluation")
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    rows = np.atleast_2d(u)
    if rows.shape[1] != spec.dim:
        raise ValueError(f"expected perturbations of dimension {spec.dim}")
    d = spec.dim
    chol = cholesky(spec.scale_matrix, lower=True)
    v = solve_triangular(chol, rows.T, lower=True).T / scale
    mahal_sq = np.einsum("ij,ij->i", v, v)
    log_det = d * np.log(scale) + np.sum(np.log(np.diag(chol)))
    mass = chi2.cdf(spec.truncation_radius**2, df=d)
    log_pdf = -0.5 * (d * np.log(2 * np.pi) + mahal_sq) - log_det - np.log(mass)
    dens = np.where(mahal_sq <= spec.truncation_radius**2, np.exp(log_pdf), 0.0)
    return float(dens[0]) if single else dens


@dataclass(frozen=True)
class ExtendedModel:
    """A base model whose state is augmented with a perturbed parameter copy.

    Augmented states are rows (x, theta) with theta on the unconstrained
    scale.  The initial draw spreads theta around ``theta_center`` with
    scale tau; each transition first propagates x with the pre-step
    theta, then steps theta with scale sigma from a stream disjoint from
    the state-transition stream.
    """

    base: ModelSpec
    kernel: KernelSpec
    scales: PerturbationScales
    theta_center: np.ndarray

    def __post_init__(self):
        if self.kernel.dim != self.base.dim_params:
            raise ValueError("kernel dimension must match the model's dim_params")
        theta = check_unconstrained(self.theta_center, self.base.dim_params)
        theta = np.array(theta, copy=True)
        theta.setflags(write=False)
        object.__setattr__(self, "theta_center", theta)

    @property
    def dim_state(self) -> int:
        return self.base.dim_state + self.base.dim_params

    @property
    def dim_obs(self) -> int:
        return self.base.dim_obs

    @property
    def dim_params(self) -> int:
        return self.base.dim_params

    def split(self, z):
        """Split augmented rows into (state part, unconstrained-theta part)."""
        return z[:, : self.base.dim_state], z[:, self.base.dim_state :]

    def sample_initial(self, n_particles, stream: RngStream, step=0):
        gen = stream.child("theta").generator()
        theta = self.theta_center + kernel_sample(self.kernel, self.scales.tau, gen, n_particles)
        theta_nat = self.base.transform.to_natural(theta)
        x = self.base.sample_initial(theta_nat, n_particles, stream, step=step)
        return np.hstack([x, theta])

    def sample_transition(self, z, t_prev, t_curr, stream: RngStream, step=None):
        x, theta = self.split(z)
        theta_nat = self.base.transform.to_natural(theta)
        x_new = self.base.sample_transition(x, theta_nat, t_prev, t_curr, stream, step=step)
        gen = stream.child("theta").generator()
        theta_new = theta + kernel_sample(self.kernel, self.scales.sigma, gen, z.shape[0])
        return np.hstack([x_new, theta_new])

    def measurement_weights(self, y, z, t):
        x, theta = self.split(z)
        theta_nat = self.base.transform.to_natural(theta)
        return self.base.measurement_weights(y, x, theta_nat, t)


def extend_model(
    base: ModelSpec,
    kernel: KernelSpec,
    scales: PerturbationScales,
    theta_center,
) -> ExtendedModel:
    """Build the augmented model over (state, perturbed parameters)."""
    return ExtendedModel(base=base, kernel=kernel, scales=scales,
                         theta_center=np.asarray(theta_center, dtype=float))
