"""Second-order finite differences on a uniform grid.

Central stencils in the interior and second-order one-sided stencils at
the ends.  When ``parity`` is given the left end is treated as a
reflection point (ghost node u[-1] = +u[1] for even, -u[1] for odd).
"""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np

Parity = Optional[Literal["even", "odd"]]


def d1(u: np.ndarray, h: float, parity: Parity = None) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    out[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * h)
    if parity == "even":
        out[0] = 0.0
    elif parity == "odd":
        out[0] = u[1] / h
    else:
        out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
    return out


def d2(u: np.ndarray, h: float, parity: Parity = None) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    h2 = h * h
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h2
    out[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / h2
    if parity == "even":
        out[0] = 2.0 * (u[1] - u[0]) / h2
    elif parity == "odd":
        out[0] = 0.0
    else:
        out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h2
    return out
