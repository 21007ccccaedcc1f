"""Structured mesh generation with a learned boundary-to-mesh operator.

The pipeline: parametric boundary families (:mod:`meshonet.geometry`), the
algebraic TFI baseline (:mod:`meshonet.tfi`), Winslow elliptic smoothing as
ground truth (:mod:`meshonet.elliptic`), the dual-branch operator network
(:mod:`meshonet.network`) and its training loop (:mod:`meshonet.training`).
"""
from .errors import MeshONetError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "MeshONetError", "__version__"]
