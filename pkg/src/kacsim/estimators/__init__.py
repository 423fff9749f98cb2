from .chaos import chaos_covariance
from .entropy import entropy_knn
from .fisher import fisher_estimate, fisher_kde_plugin, fisher_knn_score
from .moments import moments
from .pairwise import pairwise_singular_moment
from .report import DiagnosticsRecord, EstimatorReport
from .transport import SLICED_CALIBRATION, w2_distance, w2_replicas

__all__ = [
    "DiagnosticsRecord", "EstimatorReport", "SLICED_CALIBRATION", "chaos_covariance", "entropy_knn",
    "fisher_estimate", "fisher_kde_plugin", "fisher_knn_score", "moments", "pairwise_singular_moment",
    "w2_distance", "w2_replicas",
]
