"""Score estimation from filter moments and the iterated-filtering loop.

A single filtering pass over the parameter-augmented model yields a
log-likelihood gradient estimate: the sum over steps of the inverse
parameter prediction variance applied to the filter-mean increment.
Iterated filtering feeds that estimate into a stochastic-approximation
update with shrinking perturbation scales; the theoretical schedule
follows a power-law family with provable convergence rates, while the
practical schedule (the default in applied work) uses geometric cooling
at a fixed particle count, optionally re-heated at scheduled restarts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import IterfiltError, ModelEvaluationError, ModelSpec, ObservationSeries, RngStream, check_unconstrained
from .kernel import KernelSpec, PerturbationScales, extend_model
from .smc import FilterDegeneracyError, FilterResult, particle_filter

__all__ = [
    "SingularVarianceError",
    "MifAbortError",
    "IterationSettings",
    "TheoreticalSchedule",
    "PracticalSchedule",
    "MifSchedule",
    "ScoreEstimate",
    "MifResult",
    "ConditionReport",
    "ScheduleReport",
    "score_estimate",
    "mif_run",
    "check_schedule",
]

_MAX_CONDITION = 1e12


class SingularVarianceError(IterfiltError):
    """A parameter prediction variance was numerically singular.

    Raised when the matrix stays ill-conditioned (condition number above
    1e12) even after a relative jitter of 1e-10 * trace.
    """

    def __init__(self, message, step=None, condition_number=None):
        super().__init__(message)
        self.step = step
        self.condition_number = condition_number


class MifAbortError(IterfiltError):
    """An iteration failed; ``partial`` holds the completed trajectory."""

    def __init__(self, message, iteration, partial):
        super().__init__(message)
        self.iteration = iteration
        self.partial = partial


@dataclass(frozen=True)
class IterationSettings:
    """Resolved per-iteration knobs: gain, perturbation scales, particles."""

    gain: float
    sigma: float
    tau: float
    n_particles: int


@dataclass(frozen=True)
class TheoreticalSchedule:
    """Power-law schedule satisfying the convergence rate conditions.

    Iteration i (0-based) uses m = i + 1 and
    gain = m**gain_exponent, tau^2 = m**tau_sq_exponent,
    sigma^2 = m**sigma_sq_exponent, particles = ceil(m**particles_exponent
    * base_particles).  The defaults, parameterized by delta > 0, satisfy
    every rate condition (see :func:`check_schedule`); the exponents can
    be overridden to probe what breaks when they do not.
    """

    n_iterations: int
    delta: float = 0.5
    base_particles: int = 100
    gain_exponent: float = -1.0
    tau_sq_exponent: float = -1.0
    sigma_sq_exponent: float | None = None
    particles_exponent: float | None = None

    def __post_init__(self):
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.base_particles < 1:
            raise ValueError("base_particles must be >= 1")

    @property
    def mode(self) -> str:
        return "theoretical"

    def _sigma_sq_exponent(self) -> float:
        return -(1.0 + self.delta) if self.sigma_sq_exponent is None else self.sigma_sq_exponent

    def _particles_exponent(self) -> float:
        return self.delta + 0.5 if self.particles_exponent is None else self.particles_exponent

    def iteration(self, i: int) -> IterationSettings:
        m = float(i + 1)
        return IterationSettings(
            gain=m**self.gain_exponent,
            sigma=np.sqrt(m**self._sigma_sq_exponent()),
            tau=np.sqrt(m**self.tau_sq_exponent),
            n_particles=int(np.ceil(m**self._particles_exponent() * self.base_particles)),
        )


@dataclass(frozen=True)
class PracticalSchedule:
    """Fixed-J geometric cooling with a constant sigma/tau ratio.

    Iteration i uses tau = tau0 * cooling**i, sigma = sigma0 * cooling**i
    and gain = gain0 * gain_decay**i.  Iterations listed in
    ``tempering_restarts`` first re-raise both scales by
    ``tempering_factor`` (cumulatively), chaining quenched searches.
    """

    n_iterations: int
    n_particles: int
    sigma0: float
    tau0: float
    cooling: float = 0.95
    gain0: float = 0.1
    gain_decay: float = 0.95
    tempering_restarts: tuple[int, ...] = ()
    tempering_factor: float = 1.0

    def __post_init__(self):
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not (0 < self.cooling <= 1):
            raise ValueError("cooling factor must lie in (0, 1]")
        if self.sigma0 < 0 or not self.tau0 > 0:
            raise ValueError("sigma0 must be >= 0 and tau0 > 0")
        if self.gain0 < 0:
            raise ValueError("gain0 must be >= 0")
        if not (0 < self.gain_decay <= 1):
            raise ValueError("gain_decay must lie in (0, 1]")
        if not self.tempering_factor >= 1:
            raise ValueError("tempering_factor must be >= 1")
        restarts = tuple(sorted(int(r) for r in self.tempering_restarts))
        if any(r < 0 for r in restarts):
            raise ValueError("tempering restarts must be nonnegative iterations")
        object.__setattr__(self, "tempering_restarts", restarts)

    @property
    def mode(self) -> str:
        return "practical"

    def iteration(self, i: int) -> IterationSettings:
        reheats = sum(1 for r in self.tempering_restarts if r <= i)
        factor = self.cooling**i * self.tempering_factor**reheats
        return IterationSettings(
            gain=self.gain0 * self.gain_decay**i,
            sigma=self.sigma0 * factor,
            tau=self.tau0 * factor,
            n_particles=self.n_particles,
        )


MifSchedule = TheoreticalSchedule | PracticalSchedule


@dataclass(frozen=True)
class ScoreEstimate:
    """Log-likelihood gradient estimate with its per-step contributions."""

    value: np.ndarray
    per_step_terms: np.ndarray
    filter_result: FilterResult


@dataclass(frozen=True)
class MifResult:
    """Parameter trajectory and per-iteration diagnostics of one search."""

    trajectory: np.ndarray
    trajectory_natural: np.ndarray
    logliks: np.ndarray
    scores: np.ndarray
    schedule: MifSchedule
    param_names: tuple[str, ...] = field(default=())

    @property
    def n_iterations_completed(self) -> int:
        return int(self.logliks.shape[0])

    @property
    def theta_final(self) -> np.ndarray:
        return self.trajectory[-1]


def _solve_prediction_variance(var, rhs, step):
    """Solve var @ x = rhs for a symmetric PSD estimate, with jitter fallback."""
    sym = (var + var.T) / 2.0
    for attempt in range(2):
        evals, evecs = np.linalg.eigh(sym)
        if evals[0] > 0 and evals[-1] / evals[0] <= _MAX_CONDITION:
            return evecs @ ((evecs.T @ rhs) / evals)
        if attempt == 0:
            sym = sym + (1e-10 * np.trace(sym)) * np.eye(sym.shape[0])
    cond = np.inf if evals[0] <= 0 else evals[-1] / evals[0]
    raise SingularVarianceError(
        f"parameter prediction variance at step {step} is singular "
        f"(condition number {cond:.3g}); increase n_particles or tau",
        step=step,
        condition_number=cond,
    )


def score_estimate(
    model: ModelSpec,
    theta,
    data: ObservationSeries,
    kernel: KernelSpec,
    *,
    sigma: float,
    tau: float,
    n_particles: int,
    rng: RngStream,
    resampler="systematic",
) -> ScoreEstimate:
    """Estimate the log-likelihood gradient at unconstrained theta.

    Runs the filter on the parameter-augmented model and accumulates,
    over steps, the inverse prediction variance applied to the filter
    mean increment.  The estimate converges to the true gradient as
    tau -> 0 with sigma/tau -> 0, at Monte Carlo variance of order
    1/(tau^2 J).
    """
    theta = check_unconstrained(theta, model.dim_params)
    if not tau > 0:
        raise ValueError("tau must be > 0")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma > tau:
        warnings.warn(
            f"sigma/tau = {sigma / tau:.3g} exceeds 1; the gradient estimate "
            "is only accurate for small sigma/tau",
            stacklevel=2,
        )
    min_particles = max(2, model.dim_params + 1)
    if n_particles < min_particles:
        raise ValueError(
            f"n_particles must be >= {min_particles} so prediction variances are invertible"
        )
    extended = extend_model(model, kernel, PerturbationScales(sigma=sigma, tau=tau), theta)
    result = particle_filter(
        extended, data, n_particles=n_particles, rng=rng, resampler=resampler
    )
    n_obs = data.n_obs
    terms = np.empty((n_obs, model.dim_params))
    for n in range(1, n_obs + 1):
        increment = result.filter_means[n] - result.filter_means[n - 1]
        terms[n - 1] = _solve_prediction_variance(
            result.prediction_variances[n - 1], increment, n
        )
    return ScoreEstimate(value=terms.sum(axis=0), per_step_terms=terms, filter_result=result)


def mif_run(
    model: ModelSpec,
    data: ObservationSeries,
    theta_start,
    kernel: KernelSpec,
    schedule: MifSchedule,
    *,
    rng: RngStream,
    resampler="systematic",
    divergence_bound: float | None = None,
) -> MifResult:
    """Iterated filtering: follow stochastic gradient estimates uphill.

    Each iteration i draws its randomness from the (``"iteration"``, i)
    child stream, runs one augmented filter at the current estimate, and
    applies the update theta <- theta + gain_i * score_i.  The returned
    trajectory has ``schedule.n_iterations + 1`` rows (natural-scale
    copy included); per-iteration log-likelihood estimates come for free
    from the filtering passes and are useful for checking that the
    likelihood actually climbed.

    ``divergence_bound`` is a purely heuristic tripwire: the first time
    any |theta| coordinate exceeds it a warning is emitted (the run
    continues; a wandering iterate is indistinguishable at runtime from
    a distant optimum).

    Raises:
        MifAbortError: a filter degenerated or a prediction variance was
            singular; ``partial`` carries the iterations completed so far.
    """
    theta = check_unconstrained(theta_start, model.dim_params)
    trajectory = [theta]
    logliks: list[float] = []
    scores: list[np.ndarray] = []

    def _result() -> MifResult:
        traj = np.asarray(trajectory)
        return MifResult(
            trajectory=traj,
            trajectory_natural=model.transform.to_natural(traj),
            logliks=np.asarray(logliks),
            scores=(
                np.asarray(scores)
                if scores
                else np.empty((0, model.dim_params))
            ),
            schedule=schedule,
            param_names=model.transform.names,
        )

    for i in range(schedule.n_iterations):
        settings = schedule.iteration(i)
        stream = rng.child("iteration", i)
        try:
            estimate = score_estimate(
                model,
                trajectory[-1],
                data,
                kernel,
                sigma=settings.sigma,
                tau=settings.tau,
                n_particles=settings.n_particles,
                rng=stream,
                resampler=resampler,
            )
        except (FilterDegeneracyError, SingularVarianceError, ModelEvaluationError, ValueError) as exc:
            raise MifAbortError(
                f"iteration {i} failed: {exc}", iteration=i, partial=_result()
            ) from exc
        trajectory.append(trajectory[-1] + settings.gain * estimate.value)
        logliks.append(estimate.filter_result.loglik)
        scores.append(estimate.value)
        if (
            divergence_bound is not None
            and np.any(np.abs(trajectory[-1]) > divergence_bound)
            and not np.any(np.abs(trajectory[-2]) > divergence_bound)
        ):
            warnings.warn(
                f"iterate left the |theta| <= {divergence_bound:g} box at "
                f"iteration {i}; the search may be diverging",
                stacklevel=2,
            )
    return _result()


@dataclass(frozen=True)
class ConditionReport:
    name: str
    satisfied: bool
    detail: str


@dataclass(frozen=True)
class ScheduleReport:
    """Outcome of the rate-condition checks for one schedule."""

    mode: str
    conditions: tuple[ConditionReport, ...]

    @property
    def all_satisfied(self) -> bool:
        return all(c.satisfied for c in self.conditions)

    def violated(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.conditions if not c.satisfied)

    def summary(self) -> str:
        lines = [f"schedule mode: {self.mode}"]
        for c in self.conditions:
            flag = "ok " if c.satisfied else "VIOLATED"
            lines.append(f"  [{flag}] {c.name}: {c.detail}")
        return "\n".join(lines)


def _check_theoretical(s: TheoreticalSchedule) -> ScheduleReport:
    a = s.gain_exponent
    t2 = s.tau_sq_exponent
    s2 = s._sigma_sq_exponent()
    j = s._particles_exponent()
    ratio_exp = (s2 - t2) / 2.0
    jtau_exp = j + t2 / 2.0
    series_exp = 2 * a - j - t2
    conditions = (
        ConditionReport(
            "tau_to_zero",
            t2 < 0,
            f"tau_m^2 ~ m^{t2:g}; needs a negative exponent",
        ),
        ConditionReport(
            "sigma_tau_ratio_to_zero",
            ratio_exp < 0,
            f"sigma_m/tau_m ~ m^{ratio_exp:g}; needs a negative exponent",
        ),
        ConditionReport(
            "particles_tau_to_infinity",
            jtau_exp > 0,
            f"J_m*tau_m ~ m^{jtau_exp:g}; needs a positive exponent",
        ),
        ConditionReport(
            "gain_sum_diverges",
            -1.0 <= a < 0,
            f"gain_m ~ m^{a:g}; gains must shrink to zero yet sum to infinity, "
            "so the exponent must lie in [-1, 0)",
        ),
        ConditionReport(
            "gain_sq_series_converges",
            series_exp < -1.0,
            f"gain_m^2/(J_m*tau_m^2) ~ m^{series_exp:g}; the series converges "
            "only for an exponent below -1",
        ),
    )
    return ScheduleReport(mode=s.mode, conditions=conditions)


def _check_practical(s: PracticalSchedule) -> ScheduleReport:
    cooling = s.cooling
    tau_ok = cooling < 1
    ratio_zero = s.sigma0 == 0
    gain_to_zero = s.gain_decay < 1
    series_ratio = (s.gain_decay / cooling) ** 2
    conditions = (
        ConditionReport(
            "tau_to_zero",
            tau_ok,
            f"tau_m = tau0 * {cooling:g}^m "
            + ("tends to zero" if tau_ok else "never decreases (cooling = 1)"),
        ),
        ConditionReport(
            "sigma_tau_ratio_to_zero",
            ratio_zero,
            (
                "sigma_m is identically zero"
                if ratio_zero
                else f"sigma_m/tau_m is held constant at {s.sigma0 / s.tau0:g}; "
                "it does not tend to zero"
            ),
        ),
        ConditionReport(
            "particles_tau_to_infinity",
            False,
            f"J_m = {s.n_particles} is fixed, so J_m*tau_m "
            + ("tends to zero" if tau_ok else "stays bounded")
            + "; the condition J_m*tau_m -> infinity is violated",
        ),
        ConditionReport(
            "gain_sum_diverges",
            False,
            f"gain_m = gain0 * {s.gain_decay:g}^m "
            + (
                "sums to a finite value"
                if gain_to_zero
                else "diverges in sum but the gains never shrink to zero"
            ),
        ),
        ConditionReport(
            "gain_sq_series_converges",
            series_ratio < 1,
            f"gain_m^2/(J*tau_m^2) is geometric with ratio {series_ratio:g}; "
            + ("converges" if series_ratio < 1 else "does not converge"),
        ),
    )
    return ScheduleReport(mode=s.mode, conditions=conditions)


def check_schedule(schedule: MifSchedule) -> ScheduleReport:
    """Check the stochastic-approximation rate conditions symbolically.

    Theoretical schedules are verified by exponent arithmetic on the
    power-law family; practical schedules get an informational report of
    which conditions their fixed-J geometric cooling violates (running
    one anyway is standard practice).
    """
    if isinstance(schedule, TheoreticalSchedule):
        return _check_theoretical(schedule)
    if isinstance(schedule, PracticalSchedule):
        return _check_practical(schedule)
    raise TypeError(f"unsupported schedule type {type(schedule).__name__}")
