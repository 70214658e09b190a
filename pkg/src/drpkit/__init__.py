"""drpkit: sample-based expected-coverage testing for posterior estimators.

Estimates expected coverage probabilities purely from samples (the DRP,
distance-to-random-point, test) or from density evaluations (the classical HPD
test), and ships synthetic benchmarks with known ground truth: a Gaussian toy
model, a conjugate model with an uninformative estimator, and a linear-Gaussian
source-reconstruction problem with exact and biased reverse-SDE samplers.
"""

__version__ = "0.1.0"

from .numerics import (
    BinomialBand,
    DecompositionError,
    SeededRng,
    binomial_band,
    cholesky,
    ks_uniform_statistic,
    mvn_sample,
    mvn_sample_batch,
    norm_cdf,
    norm_isf,
)
from .coverage import (
    CoverageCurve,
    DataShift,
    DensityUnavailableError,
    DistanceMetric,
    Euclidean,
    JointSampleSet,
    NormalizationError,
    NormalizationMap,
    PosteriorSampler,
    PriorDraw,
    RankStatistic,
    ReferencePolicy,
    SimulationError,
    UnitHypercubeUniform,
    WeightedEuclidean,
    default_levels,
    drp_rank,
    drp_test,
    drp_test_precomputed,
    ecp_curve,
    fit_normalization,
    hpd_rank,
    hpd_test,
    region_membership_ecp,
    sample_reference,
)
from .benchmarks import (
    ConjugateConfig,
    DiagonalGaussianSampler,
    ToyConfig,
    ToySimulation,
    UninformativeSampler,
    biased_mean,
    conjugate_datashift_policy,
    conjugate_posterior_params,
    conjugate_prior_policy,
    generate_conjugate,
    generate_toy,
    toy_prior_policy,
)
from .lensing import (
    DiffusionPosteriorSampler,
    DivergenceError,
    LensingModel,
    OperatorError,
    PriorError,
    VeSchedule,
    build_model,
    build_operator,
    build_prior,
    conjugate_posterior,
    lensing_prior_policy,
    likelihood_score,
    make_dataset,
    prior_score,
    rsde_sample,
    rsde_sample_batch,
    sigma_t,
    simulate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
