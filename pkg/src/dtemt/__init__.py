"""State-space EMT simulation with a high-order Taylor-recursion integrator."""

from .series import CoeffSeries, dt_const, dt_add, dt_sub, dt_scale, dt_mul, series_eval

__version__ = "0.1.0"

__all__ = [
    "CoeffSeries",
    "dt_const",
    "dt_add",
    "dt_sub",
    "dt_scale",
    "dt_mul",
    "series_eval",
    "__version__",
]
