"""iterfilt: simulation-based likelihood inference for partially observed
Markov processes.

The engine needs only three things from a model: an initial-state
sampler, a transition simulator, and a measurement density.  On top of
that it provides sequential Monte Carlo filtering with an unbiased
likelihood estimator, moment-based log-likelihood gradient estimates,
and the iterated-filtering parameter search, all verified against an
exact linear-Gaussian reference.
"""

from .accel import BACKEND, USING_NUMBA
from .core import (
    IterfiltError,
    ModelEvaluationError,
    ModelSpec,
    ObservationSeries,
    ParamTransform,
    RngStream,
    TimeGrid,
    simulate,
)
from .ifilter import (
    MifAbortError,
    MifResult,
    PracticalSchedule,
    ScoreEstimate,
    SingularVarianceError,
    TheoreticalSchedule,
    check_schedule,
    mif_run,
    score_estimate,
)
from .kernel import (
    ExtendedModel,
    KernelSpec,
    PerturbationScales,
    extend_model,
    kernel_density,
    kernel_sample,
)
from .models import available_models, build_model, make_discretized_ou, make_lgss, register_model
from .oracle import (
    LgssSpec,
    ParamBinding,
    bind_params,
    kalman_filter,
    kalman_loglik,
    kalman_score,
    reference_optimize,
)
from .smc import (
    FilterDegeneracyError,
    FilterResult,
    ParticleEnsemble,
    effective_sample_size,
    multinomial_resample,
    particle_filter,
    systematic_resample,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "USING_NUMBA",
    "IterfiltError",
    "ModelEvaluationError",
    "ModelSpec",
    "ObservationSeries",
    "ParamTransform",
    "RngStream",
    "TimeGrid",
    "simulate",
    "MifAbortError",
    "MifResult",
    "PracticalSchedule",
    "ScoreEstimate",
    "SingularVarianceError",
    "TheoreticalSchedule",
    "check_schedule",
    "mif_run",
    "score_estimate",
    "ExtendedModel",
    "KernelSpec",
    "PerturbationScales",
    "extend_model",
    "kernel_density",
    "kernel_sample",
    "available_models",
    "build_model",
    "make_discretized_ou",
    "make_lgss",
    "register_model",
    "LgssSpec",
    "ParamBinding",
    "bind_params",
    "kalman_filter",
    "kalman_loglik",
    "kalman_score",
    "reference_optimize",
    "FilterDegeneracyError",
    "FilterResult",
    "ParticleEnsemble",
    "effective_sample_size",
    "multinomial_resample",
    "particle_filter",
    "systematic_resample",
]
