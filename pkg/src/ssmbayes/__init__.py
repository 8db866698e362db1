"""Meta-trained state-space predictors versus Bayes-optimal filtering, at desk scale."""
__version__ = "0.1.0"

from .lgssm import (  # noqa: E402
    FilterState,
    GainSchedule,
    LgssmParams,
    Trajectory,
    augment_ar1,
    gain_schedule,
    kalman_filter,
    kalman_step,
    log_likelihood,
    predict_next_obs,
    simulate,
    steady_state,
)
from .oracle import (  # noqa: E402
    OracleConfig,
    bayes_oracle_corr,
    bayes_oracle_corr_marginal,
    bayes_oracle_lgssm,
    hmm_forward_step,
    hmm_predict_next,
)
from .tasks import (  # noqa: E402
    CorrNoiseConfig,
    HmmParams,
    LgssmPriorConfig,
    sample_corr_noise_task,
    sample_hmm_task,
    sample_lgssm_task,
    simulate_hmm,
)

__all__ = [
    "__version__",
    "LgssmParams", "FilterState", "Trajectory", "GainSchedule",
    "simulate", "kalman_step", "kalman_filter", "predict_next_obs", "log_likelihood",
    "gain_schedule", "steady_state", "augment_ar1",
    "LgssmPriorConfig", "CorrNoiseConfig", "HmmParams",
    "sample_lgssm_task", "sample_corr_noise_task", "sample_hmm_task", "simulate_hmm",
    "OracleConfig", "bayes_oracle_lgssm", "bayes_oracle_corr", "bayes_oracle_corr_marginal",
    "hmm_forward_step", "hmm_predict_next",
]
