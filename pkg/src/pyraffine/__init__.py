"""Pyramidal per-pixel affine correspondence: coarse-to-fine residual
regression over constrained cost volumes, with weak consistency supervision.

Submodules are imported lazily so the CLI can pin thread counts before any
numerics load.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "autodiff", "cli", "cost_volume", "evaluate", "features", "formats",
    "geometry", "gradcheck", "pipeline", "regressors", "report", "supervision",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name: str):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
