"""Model abstraction, parameter transforms, time grid and seedable randomness.

A partially observed Markov model is specified purely through simulator
callbacks (:class:`ModelSpec`); no transition densities are ever
evaluated.  All engine-side parameter arithmetic happens on an
unconstrained scale; user callbacks always receive natural-scale values.
Every stochastic operation draws from an :class:`RngStream`, a
counter-style (seed, path) scheme under which equal paths reproduce
draws bit-for-bit and distinct paths are statistically independent.
"""

from __future__ import annotations

import hashlib
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

__all__ = [
    "IterfiltError",
    "ModelEvaluationError",
    "RngStream",
    "TimeGrid",
    "ParamTransform",
    "ModelSpec",
    "ObservationSeries",
    "simulate",
]


class IterfiltError(Exception):
    """Base class for engine errors."""


class ModelEvaluationError(IterfiltError):
    """A user callback produced an invalid (non-finite or misshaped) value.

    Attributes:
        step: observation-time index at which the callback was invoked
            (0 for the initial draw), or None outside the time loop.
        callback: name of the offending callback.
    """

    def __init__(self, message, step=None, callback=None):
        super().__init__(message)
        self.step = step
        self.callback = callback


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream path indices must be nonnegative, got {label}")
        return int(label)
    if isinstance(label, str):
        digest = hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream path labels must be int or str, got {type(label).__name__}")


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream addressed by (master seed, path).

    Children are derived by extending the path with labels (strings or
    nonnegative integers); derivation is pure, so the same (seed, path)
    always yields the same generator no matter when or where it is
    built.  Distinct paths give statistically independent streams.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *labels) -> "RngStream":
        extra = tuple(_label_to_int(lab) for lab in labels)
        return RngStream(self.seed, self.path + extra)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class TimeGrid:
    """Observation times t_1 < ... < t_N together with an initial time t_0."""

    t0: float
    times: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if times.ndim != 1 or times.size < 1:
            raise ValueError("TimeGrid needs at least one observation time")
        if not np.all(np.isfinite(times)) or not np.isfinite(self.t0):
            raise ValueError("TimeGrid times must be finite")
        if not np.all(np.diff(times) > 0):
            raise ValueError("observation times must be strictly increasing")
        if not self.t0 < times[0]:
            raise ValueError("t0 must precede the first observation time")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def n_obs(self) -> int:
        return int(self.times.size)

    @classmethod
    def uniform(cls, n_obs: int, dt: float = 1.0, t0: float = 0.0) -> "TimeGrid":
        return cls(t0=t0, times=t0 + dt * np.arange(1, n_obs + 1))


_TRANSFORM_KINDS = ("identity", "log", "logit")


@dataclass(frozen=True)
class ParamTransform:
    """Per-coordinate monotone maps between natural and unconstrained scales.

    Supported kinds: ``identity``, ``log`` (positive naturals) and
    ``logit`` (naturals in (0, 1)).
    """

    names: tuple[str, ...]
    kinds: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if len(self.names) != len(self.kinds):
            raise ValueError("names and kinds must have equal length")
        for name, kind in zip(self.names, self.kinds):
            if kind not in _TRANSFORM_KINDS:
                raise ValueError(f"unknown transform kind {kind!r} for {name!r}")

    @property
    def dim(self) -> int:
        return len(self.names)

    @classmethod
    def identity(cls, names: Sequence[str]) -> "ParamTransform":
        names = tuple(names)
        return cls(names=names, kinds=("identity",) * len(names))

    def to_unconstrained(self, natural) -> np.ndarray:
        values = np.asarray(natural, dtype=float)
        self._check_shape(values)
        out = np.array(values, dtype=float, copy=True)
        for i, (name, kind) in enumerate(zip(self.names, self.kinds)):
            col = values[..., i]
            if kind == "identity":
                continue
            if kind == "log":
                if np.any(col <= 0):
                    raise ValueError(f"parameter {name!r} must be positive for a log transform")
                out[..., i] = np.log(col)
            elif kind == "logit":
                if np.any((col <= 0) | (col >= 1)):
                    raise ValueError(f"parameter {name!r} must lie in (0, 1) for a logit transform")
                out[..., i] = logit(col)
        return out

    def to_natural(self, unconstrained) -> np.ndarray:
        values = np.asarray(unconstrained, dtype=float)
        self._check_shape(values)
        out = np.array(values, dtype=float, copy=True)
        for i, kind in enumerate(self.kinds):
            if kind == "identity":
                continue
            if kind == "log":
                out[..., i] = np.exp(values[..., i])
            elif kind == "logit":
                out[..., i] = expit(values[..., i])
        return out

    def _check_shape(self, values: np.ndarray):
        if values.ndim == 0 or values.shape[-1] != self.dim:
            raise ValueError(
                f"expected parameter vectors of length {self.dim}, got shape {values.shape}"
            )


def check_unconstrained(theta, dim: int) -> np.ndarray:
    """Validate an unconstrained parameter vector: 1-D, finite, right length."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dim,):
        raise ValueError(f"expected parameter vector of shape ({dim},), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter vector must be finite")
    return theta


@dataclass(frozen=True)
class ModelSpec:
    """A partially observed Markov model given by simulator callbacks.

    Callbacks are vectorized across particles and receive natural-scale
    parameters, one row per particle:

    * ``init_sampler(theta_nat, rng) -> (J, dim_state)`` draws initial
      states; ``theta_nat`` has shape (J, dim_params).
    * ``transition_sampler(x, theta_nat, t_prev, t_curr, rng) ->
      (J, dim_state)`` propagates states over one observation interval.
    * ``measurement_density(y, x, theta_nat, t) -> (J,)`` evaluates the
      observation density (not its log) at a single observation vector.
    * ``obs_sampler(x, theta_nat, t, rng) -> (J, dim_obs)`` is optional
      and used only by :func:`simulate`.

    Callbacks must be reentrant and draw exclusively from the generator
    they are handed; the engine derives those generators from disjoint
    stream paths, so results never depend on evaluation order.
    """

    dim_state: int
    dim_obs: int
    dim_params: int
    init_sampler: Callable
    transition_sampler: Callable
    measurement_density: Callable
    transform: ParamTransform
    obs_sampler: Callable | None = None

    def __post_init__(self):
        if self.transform.dim != self.dim_params:
            raise ValueError("transform dimension must match dim_params")
        for d in (self.dim_state, self.dim_obs):
            if d < 1:
                raise ValueError("state and observation dimensions must be >= 1")

    # -- engine-facing wrappers; these own shape/finiteness enforcement --

    def sample_initial(self, theta_nat, n_particles, stream: RngStream, step=0):
        gen = stream.child("x").generator()
        x = np.asarray(self.init_sampler(theta_nat, gen), dtype=float)
        return _check_states(x, n_particles, self.dim_state, step, "init_sampler")

    def sample_transition(self, x, theta_nat, t_prev, t_curr, stream: RngStream, step=None):
        gen = stream.child("x").generator()
        out = np.asarray(self.transition_sampler(x, theta_nat, t_prev, t_curr, gen), dtype=float)
        return _check_states(out, x.shape[0], self.dim_state, step, "transition_sampler")

    def measurement_weights(self, y, x, theta_nat, t):
        w = np.asarray(self.measurement_density(y, x, theta_nat, t), dtype=float)
        if w.shape != (x.shape[0],):
            raise ModelEvaluationError(
                f"measurement_density returned shape {w.shape}, expected ({x.shape[0]},)",
                callback="measurement_density",
            )
        return w

    def sample_observation(self, x, theta_nat, t, stream: RngStream, step=None):
        if self.obs_sampler is None:
            raise ModelEvaluationError(
                "model has no obs_sampler; simulation requires one", callback="obs_sampler"
            )
        gen = stream.child("y").generator()
        y = np.asarray(self.obs_sampler(x, theta_nat, t, gen), dtype=float)
        return _check_states(y, x.shape[0], self.dim_obs, step, "obs_sampler")

    def natural_params(self, theta_unc, n_particles: int) -> np.ndarray:
        """Broadcast one unconstrained vector to (J, dim_params) natural rows."""
        theta_unc = check_unconstrained(theta_unc, self.dim_params)
        nat = self.transform.to_natural(theta_unc)
        return np.broadcast_to(nat, (n_particles, self.dim_params))


def _check_states(arr, n, dim, step, callback):
    if arr.shape != (n, dim):
        raise ModelEvaluationError(
            f"{callback} returned shape {arr.shape}, expected ({n}, {dim})",
            step=step,
            callback=callback,
        )
    if not np.all(np.isfinite(arr)):
        raise ModelEvaluationError(
            f"{callback} produced non-finite values at step {step}",
            step=step,
            callback=callback,
        )
    return arr


@dataclass(frozen=True)
class ObservationSeries:
    """Observations y_1..y_N on a TimeGrid, with optional missing markers."""

    grid: TimeGrid
    values: np.ndarray
    missing: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.n_obs:
            raise ValueError(
                f"observations must have shape (N, d_y) with N={self.grid.n_obs}, got {values.shape}"
            )
        missing = self.missing
        if missing is not None:
            missing = np.asarray(missing, dtype=bool)
            if missing.shape != (values.shape[0],):
                raise ValueError("missing markers must be one flag per observation time")
            if not np.any(missing):
                missing = None
        present = values if missing is None else values[~missing]
        if not np.all(np.isfinite(present)):
            raise ValueError("present observation values must be finite")
        values = np.array(values, copy=True)
        values.setflags(write=False)
        if missing is not None:
            missing = np.array(missing, copy=True)
            missing.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    @property
    def n_obs(self) -> int:
        return self.grid.n_obs

    @property
    def dim_obs(self) -> int:
        return int(self.values.shape[1])

    def is_missing(self, n: int) -> bool:
        """True if the observation at step n (1-based) is missing."""
        return bool(self.missing is not None and self.missing[n - 1])


def simulate(model: ModelSpec, theta, grid: TimeGrid, rng: RngStream):
    """Draw one state trajectory x_0..x_N and observations y_1..y_N.

    ``theta`` is an unconstrained parameter vector; the model's
    transform maps it to the natural scale seen by the callbacks.
    Requires the model to carry an ``obs_sampler``.  Output is a
    deterministic function of (seed, path).

    Returns:
        (states, series): states has shape (N+1, dim_state); series is
        an :class:`ObservationSeries` over ``grid``.
    """
    theta_nat = model.natural_params(theta, 1)
    n_obs = grid.n_obs
    states = np.empty((n_obs + 1, model.dim_state))
    obs = np.empty((n_obs, model.dim_obs))
    step_stream = rng.child("step", 0)
    x = model.sample_initial(theta_nat, 1, step_stream, step=0)
    states[0] = x[0]
    t_prev = grid.t0
    for n in range(1, n_obs + 1):
        t = float(grid.times[n - 1])
        step_stream = rng.child("step", n)
        x = model.sample_transition(x, theta_nat, t_prev, t, step_stream, step=n)
        y = model.sample_observation(x, theta_nat, t, step_stream, step=n)
        states[n] = x[0]
        obs[n - 1] = y[0]
        t_prev = t
    return states, ObservationSeries(grid=grid, values=obs)
