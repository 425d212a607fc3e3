"""2D layout of embedding datasets and the inverse map back to embedding space."""

from .graph import FuzzyGraph, KnnGraph, build_knn, directed_memberships, fuzzy_union, smooth_knn
from .layout import attractive_coeff, fit_curve, layout, pca_init, repulsive_coeff
from .metrics import knn_family_purity, trustworthiness
from .model import Hyper, ProjectionModel, fit, inverse_transform, load_model, save_model

__all__ = [
    "KnnGraph",
    "FuzzyGraph",
    "build_knn",
    "smooth_knn",
    "directed_memberships",
    "fuzzy_union",
    "fit_curve",
    "layout",
    "pca_init",
    "attractive_coeff",
    "repulsive_coeff",
    "trustworthiness",
    "knn_family_purity",
    "Hyper",
    "ProjectionModel",
    "fit",
    "inverse_transform",
    "save_model",
    "load_model",
]
