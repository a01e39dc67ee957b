"""Built-in model registry: scalar linear-Gaussian and discretized OU.

Builders turn a parameter configuration (values plus free/fixed flags)
into a plug-and-play :class:`~iterfilt.core.ModelSpec` whose free
parameters form the inference target.  The linear-Gaussian model also
carries an exact-inference hook used by ``--exact`` runs and the test
oracles.  Additional models can be registered at runtime with
:func:`register_model`.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .core import ModelSpec, ObservationSeries, ParamTransform
from .oracle import LgssSpec, ParamBinding, bind_params, kalman_loglik, kalman_score

__all__ = [
    "BuiltModel",
    "ExactLgss",
    "make_lgss",
    "make_discretized_ou",
    "register_model",
    "build_model",
    "available_models",
]


@dataclass(frozen=True)
class ExactLgss:
    """Exact-inference hook for linear-Gaussian instances."""

    template: LgssSpec
    bindings: tuple[ParamBinding, ...]
    transform: ParamTransform

    def spec_at(self, theta_unc) -> LgssSpec:
        theta_nat = self.transform.to_natural(np.asarray(theta_unc, dtype=float))
        return bind_params(self.template, self.bindings, theta_nat)

    def loglik(self, theta_unc, data: ObservationSeries) -> float:
        return kalman_loglik(self.spec_at(theta_unc), data)

    def score(self, theta_unc, data: ObservationSeries) -> np.ndarray:
        return kalman_score(self.spec_at(theta_unc), data, self.bindings, self.transform)


@dataclass(frozen=True)
class BuiltModel:
    """A ready-to-run model: spec, free-parameter order, start point."""

    name: str
    model: ModelSpec
    free_names: tuple[str, ...]
    theta_start: np.ndarray
    exact: ExactLgss | None = None


_LGSS_PARAMS = ("a", "q", "r")
_LGSS_KINDS = {"a": "identity", "q": "log", "r": "log"}


def make_lgss(
    values: Mapping[str, float],
    free: Sequence[str] = ("a", "q"),
    m0: float = 0.0,
    p0: float = 1.0,
) -> BuiltModel:
    """Scalar AR(1) with additive Gaussian noise, observed with noise.

    x_n = a x_{n-1} + N(0, q),  y_n = x_n + N(0, r),  x_0 ~ N(m0, p0).
    ``values`` gives natural-scale values for a, q, r; ``free`` selects
    the inferred subset (q and r live on a log scale internally).
    """
    missing = [p for p in _LGSS_PARAMS if p not in values]
    if missing:
        raise ValueError(f"lgss needs values for parameters {missing}")
    unknown = [p for p in values if p not in _LGSS_PARAMS]
    if unknown:
        raise ValueError(f"unknown lgss parameters {unknown}; expected {_LGSS_PARAMS}")
    free_names = tuple(p for p in _LGSS_PARAMS if p in free)
    if set(free) - set(free_names):
        raise ValueError(f"free parameters must be among {_LGSS_PARAMS}")
    if values["q"] <= 0 or values["r"] <= 0 or p0 < 0:
        raise ValueError("q, r must be positive and p0 nonnegative")
    index = {name: i for i, name in enumerate(free_names)}
    fixed = {name: float(values[name]) for name in _LGSS_PARAMS if name not in index}

    def col(name, theta_nat):
        # (J, 1) column for state math, or a plain scalar when fixed
        if name in index:
            return theta_nat[:, index[name] : index[name] + 1]
        return fixed[name]

    def flat(name, theta_nat):
        if name in index:
            return theta_nat[:, index[name]]
        return fixed[name]

    def init_sampler(theta_nat, gen):
        n = theta_nat.shape[0]
        return m0 + np.sqrt(p0) * gen.standard_normal((n, 1))

    def transition_sampler(x, theta_nat, t_prev, t_curr, gen):
        a = col("a", theta_nat)
        q = col("q", theta_nat)
        return a * x + np.sqrt(q) * gen.standard_normal(x.shape)

    def measurement_density(y, x, theta_nat, t):
        r = flat("r", theta_nat)
        e = y[0] - x[:, 0]
        return np.exp(-0.5 * e * e / r) / np.sqrt(2 * np.pi * r)

    def obs_sampler(x, theta_nat, t, gen):
        r = col("r", theta_nat)
        return x + np.sqrt(r) * gen.standard_normal(x.shape)

    transform = ParamTransform(
        names=free_names, kinds=tuple(_LGSS_KINDS[p] for p in free_names)
    )
    model = ModelSpec(
        dim_state=1,
        dim_obs=1,
        dim_params=len(free_names),
        init_sampler=init_sampler,
        transition_sampler=transition_sampler,
        measurement_density=measurement_density,
        transform=transform,
        obs_sampler=obs_sampler,
    )
    template = LgssSpec(
        A=[[values["a"]]],
        Q=[[values["q"]]],
        H=[[1.0]],
        R=[[values["r"]]],
        m0=[m0],
        P0=[[p0]],
    )
    matrix_of = {"a": "A", "q": "Q", "r": "R"}
    bindings = tuple(ParamBinding(name=p, matrix=matrix_of[p], row=0, col=0) for p in free_names)
    theta_start = transform.to_unconstrained(np.array([values[p] for p in free_names]))
    return BuiltModel(
        name="lgss",
        model=model,
        free_names=free_names,
        theta_start=theta_start,
        exact=ExactLgss(template=template, bindings=bindings, transform=transform),
    )


_OU_PARAMS = ("rate", "mean", "diffusion", "obs_var")
_OU_KINDS = {"rate": "log", "mean": "identity", "diffusion": "log", "obs_var": "log"}


def make_discretized_ou(
    values: Mapping[str, float],
    free: Sequence[str] = ("rate", "mean"),
    m0: float = 0.0,
    p0: float = 1.0,
    euler_steps: int = 10,
) -> BuiltModel:
    """Euler-discretized Ornstein-Uhlenbeck process observed with noise.

    dx = -rate * (x - mean) dt + diffusion dW over each observation
    interval (``euler_steps`` substeps), y_n ~ N(x_n, obs_var),
    x_0 ~ N(m0, p0).  Transitions exist only as a simulator, which is
    the point: inference never needs their density.
    """
    missing = [p for p in _OU_PARAMS if p not in values]
    if missing:
        raise ValueError(f"ou-discretized needs values for parameters {missing}")
    unknown = [p for p in values if p not in _OU_PARAMS]
    if unknown:
        raise ValueError(f"unknown ou parameters {unknown}; expected {_OU_PARAMS}")
    free_names = tuple(p for p in _OU_PARAMS if p in free)
    if set(free) - set(free_names):
        raise ValueError(f"free parameters must be among {_OU_PARAMS}")
    if euler_steps < 1:
        raise ValueError("euler_steps must be >= 1")
    for positive in ("rate", "diffusion", "obs_var"):
        if values[positive] <= 0:
            raise ValueError(f"{positive} must be positive")
    index = {name: i for i, name in enumerate(free_names)}
    fixed = {name: float(values[name]) for name in _OU_PARAMS if name not in index}

    def col(name, theta_nat):
        if name in index:
            return theta_nat[:, index[name] : index[name] + 1]
        return fixed[name]

    def flat(name, theta_nat):
        if name in index:
            return theta_nat[:, index[name]]
        return fixed[name]

    def init_sampler(theta_nat, gen):
        n = theta_nat.shape[0]
        return m0 + np.sqrt(p0) * gen.standard_normal((n, 1))

    def transition_sampler(x, theta_nat, t_prev, t_curr, gen):
        rate = col("rate", theta_nat)
        mean = col("mean", theta_nat)
        diffusion = col("diffusion", theta_nat)
        dt = (t_curr - t_prev) / euler_steps
        sqrt_dt = np.sqrt(dt)
        out = np.array(x, copy=True)
        for _ in range(euler_steps):
            noise = gen.standard_normal(out.shape)
            out = out - rate * (out - mean) * dt + diffusion * sqrt_dt * noise
        return out

    def measurement_density(y, x, theta_nat, t):
        v = flat("obs_var", theta_nat)
        e = y[0] - x[:, 0]
        return np.exp(-0.5 * e * e / v) / np.sqrt(2 * np.pi * v)

    def obs_sampler(x, theta_nat, t, gen):
        v = col("obs_var", theta_nat)
        return x + np.sqrt(v) * gen.standard_normal(x.shape)

    transform = ParamTransform(
        names=free_names, kinds=tuple(_OU_KINDS[p] for p in free_names)
    )
    model = ModelSpec(
        dim_state=1,
        dim_obs=1,
        dim_params=len(free_names),
        init_sampler=init_sampler,
        transition_sampler=transition_sampler,
        measurement_density=measurement_density,
        transform=transform,
        obs_sampler=obs_sampler,
    )
    theta_start = transform.to_unconstrained(np.array([values[p] for p in free_names]))
    return BuiltModel(
        name="ou-discretized",
        model=model,
        free_names=free_names,
        theta_start=theta_start,
        exact=None,
    )


def _build_lgss(parameters, options):
    values = {name: cfg["value"] for name, cfg in parameters.items()}
    free = [name for name, cfg in parameters.items() if cfg.get("free", False)]
    return make_lgss(values, free=free, **options)


def _build_ou(parameters, options):
    values = {name: cfg["value"] for name, cfg in parameters.items()}
    free = [name for name, cfg in parameters.items() if cfg.get("free", False)]
    return make_discretized_ou(values, free=free, **options)


_REGISTRY: dict[str, Callable] = {
    "lgss": _build_lgss,
    "ou-discretized": _build_ou,
}


def register_model(name: str, builder: Callable) -> None:
    """Register a builder ``(parameters, options) -> BuiltModel`` under a name."""
    if not callable(builder):
        raise TypeError("builder must be callable")
    _REGISTRY[name] = builder


def available_models() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def build_model(name: str, parameters, options=None) -> BuiltModel:
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown model {name!r}; registered models: {', '.join(available_models())}"
        ) from None
    built = builder(parameters, dict(options or {}))
    if not isinstance(built, BuiltModel):
        raise TypeError(f"builder for {name!r} must return a BuiltModel")
    return built
