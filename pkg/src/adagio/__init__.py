"""Data-aware near-isometric linear embeddings: PCA rows padded with a JL sketch of the residual."""

__version__ = "0.1.0"

from .dataset import CenteringInfo, PointCloud, center, load_csv, load_idx, sample_points, save_csv
from .distortion import (
    AllPairs,
    DistortionReport,
    SamplePairs,
    evaluate,
    max_distortion,
    pair_distortion,
)
from .downstream import (
    ClassificationResult,
    KnnGraph,
    build_knn_graph,
    cross_validate,
    harmonic_propagate,
    knn_query,
    majority_classify,
)
from .embed import (
    AdagioModel,
    fit,
    fit_with_split,
    load_model,
    save_model,
    transform,
    transform_all,
)
from .errors import AdagioError, DataFormatError, ModelFormatError, NumericalError
from .jl import JlMatrix, jl_dimension, sample_jl
from .spectral import (
    OrthonormalBasis,
    SpectralSummary,
    exact_top_svd,
    pca_pair_distortion_bound,
    randomized_top_svd,
    stable_rank,
)
from .sweep import MinDimResult, SweepRow, min_dim_for_distortion, tradeoff

__all__ = [
    "AdagioError", "AdagioModel", "AllPairs", "CenteringInfo", "ClassificationResult",
    "DataFormatError", "DistortionReport", "JlMatrix", "KnnGraph", "MinDimResult",
    "ModelFormatError", "NumericalError", "OrthonormalBasis", "PointCloud", "SamplePairs",
    "SpectralSummary", "SweepRow", "build_knn_graph", "center", "cross_validate", "evaluate",
    "exact_top_svd", "fit", "fit_with_split", "harmonic_propagate", "jl_dimension", "knn_query",
    "load_csv", "load_idx", "load_model", "majority_classify", "max_distortion",
    "min_dim_for_distortion", "pair_distortion", "pca_pair_distortion_bound",
    "randomized_top_svd", "sample_jl", "sample_points", "save_csv", "save_model",
    "stable_rank", "transform", "transform_all", "tradeoff",
]
