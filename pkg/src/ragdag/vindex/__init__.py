"""Vector index package: layered-graph ANN with selectable kernels."""

from ._backend import BACKEND_NAME, available_backends, get_kernels
from .index import IndexParams, ScoredDocument, VectorIndex

__all__ = [
    "BACKEND_NAME",
    "IndexParams",
    "ScoredDocument",
    "VectorIndex",
    "available_backends",
    "get_kernels",
]
