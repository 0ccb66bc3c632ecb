"""Distance fields and implicit surfaces from range data.

A Gaussian process is fit to ``exp(-lam d)`` over oriented surface points
held in a quadtree/octree of local clusters; the distance is read out as
``-ln(f) / lam``.
"""

from .covariance import InvalidInputError, KernelParams, UnsupportedKernelError
from .field import FieldEstimate, FieldEstimates
from .gp import IllConditionedError, fit, predict, predict_batch
from .map import ClusterMap, EmptyMapError, SurfacePoint
from .scene import AnalyticScene, Ball, Box
from .surface import GridSpec, Mesh, extract_iso, sample_signed_grid

__all__ = [
    "AnalyticScene",
    "Ball",
    "Box",
    "ClusterMap",
    "EmptyMapError",
    "FieldEstimate",
    "FieldEstimates",
    "GridSpec",
    "IllConditionedError",
    "InvalidInputError",
    "KernelParams",
    "Mesh",
    "SurfacePoint",
    "UnsupportedKernelError",
    "extract_iso",
    "fit",
    "predict",
    "predict_batch",
    "sample_signed_grid",
]

__version__ = "0.1.0"
