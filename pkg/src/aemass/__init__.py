"""ADM mass of asymptotically Euclidean metrics in four formulations.

Surface and weak (cutoff) versions of the classical and Ricci-tensor mass,
the supporting curvature algebra, weighted Sobolev norm estimation, and
coordinate-invariance experiments, all on the exterior chart {|x| >= R}.
"""

from ._kernels import backend_name as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
