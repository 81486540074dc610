"""Group-fair binary classification via Gaussian parameter smoothing.

Train one smoothed classifier per protected group, pull the group parameter
vectors together with a coupling penalty, average them into an overall
classifier, and certify that the overall classifier's smoothed outputs stay
within (K-1) d / (sqrt(2 pi) K sigma) of every group's own classifier on any
input, where d is the maximum pairwise parameter distance.
"""

from .data import GroupedDataset, load_adult, load_compas, partition_test, resample_group_ratio
from .metrics import EvaluationReport, accuracy, delta_dp, delta_eo, epsilon_fairness
from .model import Architecture, backward, default_architecture, forward, init_params
from .smoothing import (
    McErrorReport,
    SeedPolicy,
    SmoothedClassifier,
    mc_error_bound,
    smooth_gradient,
    smooth_predict,
    smooth_predict_matrix,
)
from .training import (
    FairnessCertificate,
    TrainingConfig,
    average_params,
    certificate_epsilon,
    certify,
    check_certificate_empirically,
    pairwise_max_distance,
    train_fair,
)
from .verify import (
    check_frechet_derivative,
    check_lipschitz,
    check_sigma_convergence,
    run_verification,
)

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "EvaluationReport",
    "FairnessCertificate",
    "GroupedDataset",
    "McErrorReport",
    "SeedPolicy",
    "SmoothedClassifier",
    "TrainingConfig",
    "accuracy",
    "average_params",
    "backward",
    "certificate_epsilon",
    "certify",
    "check_certificate_empirically",
    "check_frechet_derivative",
    "check_lipschitz",
    "check_sigma_convergence",
    "default_architecture",
    "delta_dp",
    "delta_eo",
    "epsilon_fairness",
    "forward",
    "init_params",
    "load_adult",
    "load_compas",
    "mc_error_bound",
    "pairwise_max_distance",
    "partition_test",
    "resample_group_ratio",
    "run_verification",
    "smooth_gradient",
    "smooth_predict",
    "smooth_predict_matrix",
    "train_fair",
    "__version__",
]
