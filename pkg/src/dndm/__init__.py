"""Discrete non-Markov diffusion: forward processes, transition-time machinery,
accelerated reverse samplers and exact toy-data oracles."""
from .analytics import (
    GofResult,
    NfeReport,
    chi_square_gof,
    empirical_distribution,
    expected_nfe,
    monte_carlo_nfe,
    nfe_lower_bound_uniform,
    tv_distance,
)
from .core import (
    CategoricalDist,
    NoiseKind,
    NoiseModel,
    RngStream,
    ValidationError,
    VocabSpec,
    sample_bernoulli,
    sample_categorical,
    stream_id,
)
from .datamodel import (
    DataModelError,
    ImpossibleObservationError,
    OracleDenoiser,
    Posterior,
    RecordingDenoiser,
    TeacherDenoiser,
    ToyDataModel,
    exact_posterior,
    load_data_model,
    oracle_denoiser,
    parse_data_model,
    teacher_denoiser,
)
from .forward import (
    ForwardTrajectory,
    marginal_at,
    markov_forward,
    nonmarkov_forward,
    simulate_forward_batch,
    states_from_transitions,
)
from .kernels import BACKEND
from .sampler import (
    SAMPLERS,
    SamplerConfig,
    SampleTrace,
    StepEvent,
    baseline_absorb_sample,
    baseline_multinomial_sample,
    dndm_continuous_sample,
    dndm_sample,
    dndm_topk_sample,
    dndm_v2_sample,
    get_sampler,
    multinomial_posterior,
)
from .schedule import (
    ContinuousSchedule,
    ContinuousTransitionDist,
    DiscreteSchedule,
    DiscreteTransitionDist,
    TransitionSet,
    beta_transition_distribution,
    build_cosine,
    build_cosine_squared,
    build_linear,
    build_schedule,
    continuous_cosine,
    continuous_cosine_squared,
    continuous_linear,
    order_transition_set,
    sample_transition_set,
    schedule_from_transition,
    transition_distribution,
)
from .verify import VerifyConfig, VerifyReport, verify_suite

__version__ = "0.1.0"
