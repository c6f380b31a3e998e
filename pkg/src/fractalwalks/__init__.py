"""Heavy-tailed random walks on fractal-like graphs, checked at desk scale.

Graph generators, jump kernels, energy forms, cutoff constructions, and
the empirical verification of heat-kernel and exit-time estimates, with
a CLI and an HTTP service on top.

Graph and kernel names are re-exported lazily so that importing the
package (as the CLI entry point does) stays free of numpy until a
numerical symbol is actually touched; the CLI relies on this to set
thread-pool environment variables first.
"""

import importlib

__version__ = "0.1.0"

from .errors import (
    BoundaryContaminationError,
    FractalWalksError,
    InvalidGeometryError,
    InvalidParameterError,
    InvariantViolationError,
    NumericalFailureError,
    ResourceLimitError,
)

_LAZY = {
    "WeightedGraph": ".graphs",
    "build_graph": ".graphs",
    "lattice_graph": ".graphs",
    "gasket_graph": ".graphs",
    "vicsek_graph": ".graphs",
    "MarkovKernel": ".kernels",
    "nearest_neighbor_kernel": ".kernels",
    "heavy_tailed_kernel": ".kernels",
    "subordinate_kernel": ".kernels",
    "perturb_kernel": ".kernels",
}

__all__ = [
    "__version__",
    "FractalWalksError",
    "InvalidParameterError",
    "InvalidGeometryError",
    "BoundaryContaminationError",
    "ResourceLimitError",
    "NumericalFailureError",
    "InvariantViolationError",
    *sorted(_LAZY),
]


def __getattr__(name: str):
    try:
        module = _LAZY[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    value = getattr(importlib.import_module(module, __name__), name)
    globals()[name] = value
    return value


def __dir__() -> list:
    return sorted(set(globals()) | set(_LAZY))
