"""Sequential Monte Carlo filtering with unconditional per-step resampling.

The filter propagates J particles through the model's transition
simulator, weights them by the measurement density, and resamples every
step (systematic by default, multinomial as the lower-level
theory-matching option).  Weights are handled in log space throughout;
per-step weight totals are accumulated in ascending order so the
conditional likelihoods are exactly invariant under particle
relabelling.  The summed conditional log-likelihoods form the log of an
unbiased likelihood estimator.

When the model is an :class:`~iterfilt.kernel.ExtendedModel`, the filter
additionally records the parameter filter means (initialized at the
perturbation center) and the per-step parameter prediction variances,
taken around the previous filter mean with a 1/(J-1) normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import ancestor_indices, ancestor_indices_sorted, pair_sums, scatter_matrix
from .core import IterfiltError, ObservationSeries, RngStream
from .kernel import ExtendedModel

__all__ = [
    "FilterDegeneracyError",
    "ParticleEnsemble",
    "FilterResult",
    "multinomial_resample",
    "systematic_resample",
    "resolve_resampler",
    "effective_sample_size",
    "particle_filter",
    "RESAMPLERS",
]


class FilterDegeneracyError(IterfiltError):
    """All particle weights vanished (or were invalid) at some step.

    Under a positive measurement density this signals a user-model bug
    or a parameter value far outside plausibility, so the filter fails
    hard instead of falling back to uniform weights.
    """

    def __init__(self, message, step=None, max_log_weight=None):
        super().__init__(message)
        self.step = step
        self.max_log_weight = max_log_weight


@dataclass(frozen=True)
class ParticleEnsemble:
    """J particle rows with log weights and a stage tag.

    At the filtering stage (post-resampling) all log weights are equal.
    """

    states: np.ndarray
    log_weights: np.ndarray
    stage: str

    def __post_init__(self):
        if self.stage not in ("prediction", "filtering"):
            raise ValueError(f"unknown ensemble stage {self.stage!r}")
        if self.states.ndim != 2 or self.states.shape[0] != self.log_weights.shape[0]:
            raise ValueError("states must be (J, d) with one log weight per particle")
        if self.states.shape[0] < 1:
            raise ValueError("need at least one particle")
        if np.any(np.isnan(self.log_weights)):
            raise ValueError("log weights must not be NaN")
        if self.stage == "filtering" and np.any(self.log_weights != self.log_weights[0]):
            raise ValueError("filtering-stage weights must be equal")

    @property
    def n_particles(self) -> int:
        return int(self.states.shape[0])


@dataclass(frozen=True)
class FilterResult:
    """Per-step filter output and diagnostics.

    ``filter_means`` (rows 0..N, row 0 = perturbation center) and
    ``prediction_variances`` (steps 1..N) are populated only for
    extended models; ``loglik`` is the log of the unbiased likelihood
    estimator, the sum of ``cond_loglik``.  ``final_ensemble`` holds the
    equally weighted particles after the last resampling step.
    """

    loglik: float
    cond_loglik: np.ndarray
    ess: np.ndarray
    state_filter_means: np.ndarray
    filter_means: np.ndarray | None
    prediction_variances: np.ndarray | None
    final_ensemble: ParticleEnsemble
    n_particles: int
    resampler: str


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size < 1:
        raise ValueError("weights must be a nonempty 1-D array")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise FilterDegeneracyError("all resampling weights are zero", max_log_weight=-np.inf)
    return w


def multinomial_resample(weights, gen: np.random.Generator, size=None) -> np.ndarray:
    """Draw ancestor indices i.i.d. with probabilities proportional to weights.

    ``size`` defaults to the number of weights.
    """
    w = _check_weights(weights)
    n = w.size if size is None else int(size)
    cum = np.cumsum(w)
    positions = gen.random(n) * cum[-1]
    return ancestor_indices(cum, positions)


def systematic_resample(weights, gen: np.random.Generator, size=None) -> np.ndarray:
    """Stratified ancestor draw from a single uniform.

    With J draws (``size``, defaulting to the number of weights), index
    i is copied between floor(J*w_i) and ceil(J*w_i) times, where w_i
    are the normalized weights; this has less Monte Carlo variability
    than multinomial resampling.
    """
    w = _check_weights(weights)
    n = w.size if size is None else int(size)
    cum = np.cumsum(w)
    u = gen.random()
    positions = (np.arange(n) + u) / n * cum[-1]
    return ancestor_indices_sorted(cum, positions)


RESAMPLERS = {
    "multinomial": multinomial_resample,
    "systematic": systematic_resample,
}


def resolve_resampler(resampler):
    if callable(resampler):
        return resampler, getattr(resampler, "__name__", "custom")
    try:
        return RESAMPLERS[resampler], resampler
    except KeyError:
        raise ValueError(
            f"unknown resampler {resampler!r}; expected one of {sorted(RESAMPLERS)}"
        ) from None


def effective_sample_size(log_weights) -> float:
    """(sum w)^2 / sum w^2 from log weights, a weight-degeneracy diagnostic."""
    logw = np.asarray(log_weights, dtype=float)
    m = np.max(logw)
    if not np.isfinite(m):
        return 0.0
    total, total_sq = pair_sums(np.sort(np.exp(logw - m)))
    return total * total / total_sq


def _step_log_weights(model, theta_nat, y, z, t, step):
    if isinstance(model, ExtendedModel):
        w = model.measurement_weights(y, z, t)
    else:
        x = z
        w = model.measurement_weights(y, x, theta_nat, t)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        bad = w[~(np.isfinite(w) & (w >= 0))]
        raise FilterDegeneracyError(
            f"measurement density produced invalid weights at step {step} "
            f"(example value {bad.flat[0]!r})",
            step=step,
        )
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    if np.all(w == 0):
        raise FilterDegeneracyError(
            f"all particle weights are zero at step {step}",
            step=step,
            max_log_weight=-np.inf,
        )
    return logw


def particle_filter(
    model,
    data: ObservationSeries,
    *,
    n_particles: int,
    rng: RngStream,
    theta=None,
    resampler="systematic",
) -> FilterResult:
    """Run the filter over the observation series.

    Args:
        model: a :class:`~iterfilt.core.ModelSpec` (requires ``theta``,
            an unconstrained parameter vector) or an
            :class:`~iterfilt.kernel.ExtendedModel` (``theta`` must be
            omitted; the perturbation center is baked in).
        data: observations; a missing observation contributes weight one
            at its step (conditional likelihood factor one).
        n_particles: J; extended models need J >= 2 for the prediction
            variances.
        rng: stream root; step n draws from the (``"step"``, n) child,
            so results are reproducible and independent of any
            particle-level parallelism.
        resampler: ``"systematic"``, ``"multinomial"`` or a callable
            ``(weights, generator) -> ancestor indices``.

    Raises:
        FilterDegeneracyError: all weights zero or invalid at some step.
    """
    extended = isinstance(model, ExtendedModel)
    if extended:
        if theta is not None:
            raise ValueError("theta is baked into an ExtendedModel; pass theta=None")
        if n_particles < 2:
            raise ValueError("extended models require n_particles >= 2 for prediction variances")
    else:
        if theta is None:
            raise ValueError("theta is required for a plain ModelSpec")
        if n_particles < 1:
            raise ValueError("n_particles must be >= 1")
    resample_fn, resampler_name = resolve_resampler(resampler)

    grid = data.grid
    n_obs = grid.n_obs
    J = n_particles
    d_theta = model.dim_params if extended else 0
    d_x = model.base.dim_state if extended else model.dim_state

    theta_nat = None if extended else model.natural_params(theta, J)
    step_stream = rng.child("step", 0)
    if extended:
        z = model.sample_initial(J, step_stream, step=0)
    else:
        z = model.sample_initial(theta_nat, J, step_stream, step=0)
    ensemble = ParticleEnsemble(states=z, log_weights=np.zeros(J), stage="filtering")

    cond_loglik = np.empty(n_obs)
    ess = np.empty(n_obs)
    state_means = np.empty((n_obs + 1, d_x))
    state_means[0] = z[:, :d_x].mean(axis=0)
    if extended:
        filter_means = np.empty((n_obs + 1, d_theta))
        filter_means[0] = model.theta_center
        pred_vars = np.empty((n_obs, d_theta, d_theta))
    else:
        filter_means = None
        pred_vars = None

    log_j = np.log(J)
    t_prev = grid.t0
    for n in range(1, n_obs + 1):
        t = float(grid.times[n - 1])
        step_stream = rng.child("step", n)
        if extended:
            z = model.sample_transition(ensemble.states, t_prev, t, step_stream, step=n)
        else:
            z = model.sample_transition(ensemble.states, theta_nat, t_prev, t, step_stream, step=n)

        if extended:
            theta_pred = z[:, d_x:]
            pred_vars[n - 1] = scatter_matrix(theta_pred, filter_means[n - 1]) / (J - 1)

        if data.is_missing(n):
            logw = np.zeros(J)
        else:
            logw = _step_log_weights(model, theta_nat, data.values[n - 1], z, t, n)
        ensemble = ParticleEnsemble(states=z, log_weights=logw, stage="prediction")

        m = float(np.max(logw))
        shifted = np.exp(logw - m)
        total, total_sq = pair_sums(np.sort(shifted))
        cond_loglik[n - 1] = m + np.log(total) - log_j
        ess[n - 1] = total * total / total_sq

        gen = step_stream.child("resample").generator()
        ancestors = resample_fn(shifted, gen)
        z = z[ancestors]
        ensemble = ParticleEnsemble(states=z, log_weights=np.zeros(J), stage="filtering")

        state_means[n] = z[:, :d_x].mean(axis=0)
        if extended:
            filter_means[n] = z[:, d_x:].mean(axis=0)
        t_prev = t

    return FilterResult(
        loglik=float(np.sum(cond_loglik)),
        cond_loglik=cond_loglik,
        ess=ess,
        state_filter_means=state_means,
        filter_means=filter_means,
        prediction_variances=pred_vars,
        final_ensemble=ensemble,
        n_particles=J,
        resampler=resampler_name,
    )
