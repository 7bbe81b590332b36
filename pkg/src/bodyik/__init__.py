"""Skeleton-to-mesh pipeline: analytic twist/swing IK, a relation-aware
Transformer refiner, its training losses and 3D pose/mesh metrics."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
