"""Entropic optimal transport, relaxed transport, and maximum-likelihood
deconvolution for finitely supported measures, with numerical certificates
of the structural identity connecting them.

Mixture classes are finitely parameterized (fixed grids, k free atoms, or
explicit candidate lists); general measure classes are out of scope.
"""

from .costs import (
    CostModel,
    CustomCost,
    GaussianHalfSq,
    GaussianNoise,
    NoiseModel,
    PExponential,
    PExponentialNoise,
    WfrCosine,
    WfrCosineNoise,
    cost_from_spec,
    neg_log_density_cost,
    noise_from_spec,
)
from .deconvolution import (
    EstimatorResult,
    ExplicitFiniteClass,
    GridClass,
    KAtomClass,
    kmeans_hard,
    log_likelihood,
    mle_em_grid,
    mle_estimate,
    project_entropic,
    project_relaxed,
    relaxed_nll_affine,
)
from .entropic_ot import (
    Coupling,
    SinkhornSolution,
    SolverConfig,
    entropic_ot_value,
    entropy_formulation_offset,
    kl_divergence,
    kl_product_decomposition_check,
    mutual_information,
    product_coupling,
    shannon_entropy,
    sinkhorn,
    transport_cost,
)
from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    EmptyGibbsSupportError,
    EntropicDeconvError,
    InfeasibleTransportError,
    InvalidMeasureError,
    UnreachableObservationError,
)
from .measures import (
    DiscreteMeasure,
    Sample,
    dirac,
    empirical_measure,
    second_moment,
    total_variation_distance,
)
from .relaxed_ot import (
    RelaxedSolution,
    general_noise_relaxed,
    general_noise_sinkhorn,
    gibbs_posterior_row,
    relaxed_transport,
    vp_objective,
)
from .report import Report, RunConfig, canonical_json
from .sampling import generate_sample
from .verification import (
    DEFAULTS,
    CertificateReport,
    VerificationDefaults,
    certify_counterexample,
    certify_general_noise,
    certify_kmeans_limit,
    certify_lemma1,
    certify_theorem1,
    normal_cdf,
    run_certificates,
)

__version__ = "0.1.0"
