"""Resampling schemes for particle filters, their conditional variances, and
large-sample verification experiments."""

from .core import (
    ParticleSystem,
    RandomStream,
    TestFunction,
    effective_sample_size,
    inverse_cdf,
    normalize_weights,
    uniform_draws,
    weighted_estimate,
)
from .errors import (
    DegenerateKappaError,
    DegenerateWeightsError,
    InvalidConfigError,
    InvalidWeightError,
    OutOfRangeError,
    ResampleLabError,
    SupportConditionViolatedError,
    UnsupportedOrderingError,
)
from .resampling import (
    ResampleOutput,
    ResidualDecomposition,
    SchemeId,
    apply_resample,
    exact_expected_counts,
    mc_expected_counts,
    multinomial_resample,
    resample,
    residual_decomposition,
    residual_resample,
    residual_stratified_resample,
    stratified_resample,
    systematic_resample,
)
from .variance import (
    CounterExampleConfig,
    CounterExampleVariances,
    VarianceReport,
    cond_var_mc,
    cond_var_multinomial,
    cond_var_residual,
    cond_var_residual_stratified,
    cond_var_stratified,
    cond_var_systematic_exact,
    counterexample_analytic,
    counterexample_test_function,
    exact_conditional_variance,
    make_counterexample,
    permuted_systematic_mc,
    variance_report,
)
from .filtering import (
    FilterConfig,
    FilterTrace,
    LinearGaussianParams,
    StateSpaceModel,
    bootstrap_step,
    generate_observations,
    kalman_oracle,
    linear_gaussian_model,
    load_observations,
    packaged_observations,
    run_filter,
    sisr_init,
    sisr_step,
)
from .asymptotics import (
    DensityPair,
    LimitCheckResult,
    clt_experiment,
    floor_weight_sum,
    lemma1_experiment,
    lemma1_target,
    multinomial_kappa,
    reference_pair,
    residual_kappa,
    scaled_condvar_experiment,
    support_condition_estimate,
    weighted_system,
)

__version__ = "0.1.0"
