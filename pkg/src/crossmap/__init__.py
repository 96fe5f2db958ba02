"""Cross-modal functional maps and manifold-regularized multimodal classification."""

from crossmap.errors import (
    CrossmapError,
    NumericalError,
    ParseError,
    SingularSystemError,
    StageError,
    SymmetryError,
    ValidationError,
)
from crossmap.fmbsd import (
    CorrespondenceMatrix,
    FmbsdConfig,
    FunctionalMap,
    MapProblem,
    extract_correspondences,
    fit_map,
    prepare_modalities,
    retrieve,
    retrieve_all,
)
from crossmap.graph import build_knn_graph, laplacian, modality_geometry, spectral_basis
from crossmap.m2cpc import M2CPC
from crossmap.sgws import cross_similarity, default_kernels, sgws_matrix

__version__ = "0.1.0"

__all__ = [
    "CorrespondenceMatrix", "CrossmapError", "FmbsdConfig", "FunctionalMap", "M2CPC", "MapProblem",
    "NumericalError", "ParseError", "SingularSystemError", "StageError", "SymmetryError",
    "ValidationError", "build_knn_graph", "cross_similarity", "default_kernels",
    "extract_correspondences", "fit_map", "laplacian", "modality_geometry", "prepare_modalities",
    "retrieve", "retrieve_all", "sgws_matrix", "spectral_basis",
]
