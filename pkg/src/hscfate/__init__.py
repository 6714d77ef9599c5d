"""Stochastic models of stem-cell fate: simulation, Bayesian fitting by
reversible-jump Gibbs sampling, harmonic-mean model comparison and
assessment against virtual cohorts."""

__version__ = "0.1.0"

from .model import (
    DEFAULT_INITIAL,
    RATE_NAMES,
    EventKind,
    InfeasibleEvent,
    InfeasiblePath,
    Label,
    ModelSpec,
    ObservationSeries,
    Path,
    PathEvent,
    PopulationState,
    RateVector,
    apply_event,
    log_obs_likelihood,
    log_path_density,
    state_at,
    state_trajectory,
)
from .simulate import CohortResult, ScheduleSpec, child_rng, simulate_cohort, simulate_observations, simulate_path
from .mcmc import (
    ChainConfig,
    ChainDraws,
    ChainState,
    EmptyPathMove,
    GammaPrior,
    InitializationFailure,
    Move,
    MoveWeights,
    PriorSpec,
    SufficientStats,
    UniformPrior,
    acceptance_log_ratio,
    log_proposal_ratio,
    propose_move,
    run_chain,
    state_update_sweep,
    sufficient_stats,
    update_rates,
)
from .evidence import (
    AllImpossible,
    IntegratedLikelihoodEstimate,
    bayes_factor,
    conditional_marginal,
    harmonic_mean,
    harmonic_mean_path,
    heterogeneity_compare,
    per_animal_estimates,
)
from .assessment import (
    DEFAULT_CRITERIA,
    AssessmentReport,
    CriterionStatistic,
    EmptySample,
    InsufficientData,
    assess_model,
    assess_posterior,
    compute_criteria,
    ks_two_sample,
)
from .diagnostics import TooFewSamples, cusum, effective_sample_size, hpd_interval, posterior_summary, prior_sensitivity
from .io import Dataset, ParseError, ValidationError, load_dataset, write_cohort, write_dataset
