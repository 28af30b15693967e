"""Numerical laboratory for boundary Yamabe test functions on the half-space.

Submodules load on first attribute access, so the command line can pin
thread counts before numpy starts.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "tensor_core",
    "model_bubble",
    "quadrature",
    "cutoff",
    "fermi_metric",
    "conformal_deficit",
    "weighted_solver",
    "energy_lab",
    "cli",
)

__all__ = list(_SUBMODULES)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f"{__name__}.{name}")
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
