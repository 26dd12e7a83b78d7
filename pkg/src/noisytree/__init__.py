"""Structure learning for tree MRFs observed through k-ary symmetric noise."""

from .model import (
    AlgoParams,
    NoiseSpec,
    Tree,
    TreeModel,
    build_perturbed_symmetric_model,
    build_symmetric_model,
    chain_tree,
    random_tree,
    star_tree,
    validate_assumptions,
)
from .oracle import (
    PairwisePmfSet,
    brute_force_joint,
    exact_marginal,
    exact_pairwise_pmf,
    exact_pairwise_set,
    noisy_pairwise_pmf,
)
from .sampler import SampleMatrix, apply_noise, empirical_pairwise, sample_clean
from .metric import (
    DistanceTable,
    distance_table,
    estimate_bounds,
    eta_max,
    info_distance,
    neighborhood,
)
from .quadtest import (
    MatrixQuadratic,
    RootResult,
    binary_quadratic_check,
    mean_root,
    min_residual,
    quad_coefficients,
    quadratic_error,
)
from .recovery import (
    QuartetVerdict,
    RecoveredStructure,
    RecoveryError,
    classify_quartet,
    expand_equivalence_class,
    find_center,
    find_tree,
)
from .evalkit import (
    chow_liu,
    in_t_sub,
    leaf_clusters,
    mutual_information,
    same_equivalence_class,
    score_trial,
)

__all__ = [
    "AlgoParams",
    "NoiseSpec",
    "Tree",
    "TreeModel",
    "build_perturbed_symmetric_model",
    "build_symmetric_model",
    "chain_tree",
    "random_tree",
    "star_tree",
    "validate_assumptions",
    "PairwisePmfSet",
    "brute_force_joint",
    "exact_marginal",
    "exact_pairwise_pmf",
    "exact_pairwise_set",
    "noisy_pairwise_pmf",
    "SampleMatrix",
    "apply_noise",
    "empirical_pairwise",
    "sample_clean",
    "DistanceTable",
    "distance_table",
    "estimate_bounds",
    "eta_max",
    "info_distance",
    "neighborhood",
    "MatrixQuadratic",
    "RootResult",
    "binary_quadratic_check",
    "mean_root",
    "min_residual",
    "quad_coefficients",
    "quadratic_error",
    "QuartetVerdict",
    "RecoveredStructure",
    "RecoveryError",
    "classify_quartet",
    "expand_equivalence_class",
    "find_center",
    "find_tree",
    "chow_liu",
    "in_t_sub",
    "leaf_clusters",
    "mutual_information",
    "same_equivalence_class",
    "score_trial",
]

__version__ = "0.1.0"
