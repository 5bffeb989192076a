"""Stroke-conditioned 3D skeleton generation toolkit.

Submodules are imported on demand; `skelgen.graphs` holds the shared data
model, `skelgen.cli` the command-line entry point, `skelgen.service` the HTTP
service.
"""

__version__ = "0.1.0"

from .graphs import SkeletonGraph, StrokeGraph2D  # noqa: F401
