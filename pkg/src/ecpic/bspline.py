"""Centred B-spline shape functions of orders 0, 1 and 2.

Offsets are measured in cell units, ``delta = (x_node - x_particle) / dx``,
so the shapes themselves are mesh independent.  The order-0 top-hat is
taken half-open on ``(-1/2, 1/2]`` so that exactly one node owns any point.
"""
from dataclasses import dataclass
from typing import Literal

import numpy as np

ORDERS = (0, 1, 2)


def _check_order(l, allowed=ORDERS):
    if l not in allowed:
        raise ValueError(f"spline order must be one of {allowed}, got {l!r}")


def shape(l, delta):
    """Centred B-spline of order ``l`` evaluated at ``delta`` (cell units).

    Parameters
    ----------
    l : int
        Spline order, 0, 1 or 2.
    delta : float or array_like
        Offset from the node in units of the cell width.

    Returns
    -------
    float or ndarray
        Weight; zero outside the half-width ``(l + 1) / 2``.
    """
    _check_order(l)
    d = np.asarray(delta, dtype=float)
    a = np.abs(d)
    if l == 0:
        out = np.where((d > -0.5) & (d <= 0.5), 1.0, 0.0)
    elif l == 1:
        out = np.where(a < 1.0, 1.0 - a, 0.0)
    else:
        out = np.where(a < 0.5, 0.75 - a * a,
                       np.where(a < 1.5, 0.5 * (1.5 - a) ** 2, 0.0))
    return out if out.ndim else float(out)


def shape_dd(l, delta, dx):
    """Second derivative of ``S_l(x_node - x_p)`` with respect to ``x_p``.

    Piecewise constant; at a breakpoint the value of the piece to the right
    (larger ``delta``) is returned.
    """
    _check_order(l, (1, 2))
    d = np.asarray(delta, dtype=float)
    if l == 1:
        out = np.zeros_like(d)
    else:
        out = np.where((d >= -1.5) & (d < -0.5), 1.0,
                       np.where((d >= -0.5) & (d < 0.5), -2.0,
                                np.where((d >= 0.5) & (d < 1.5), 1.0, 0.0)))
        out = out / (dx * dx)
    return out if out.ndim else float(out)


def shape_tilde(l, delta, vx, dtau, dx):
    """Time-corrected spline ``S + S'' * dtau**2 * vx**2 / 8``.

    Summed over a particle's stencil it is still a partition of unity, since
    the second derivatives sum to zero.
    """
    return shape(l, delta) + shape_dd(l, delta, dx) * (dtau * dtau / 8.0) * vx * vx


@dataclass(frozen=True)
class StencilWeights:
    """Nodes touched by one particle: ``indices[k]`` carries ``weights[k]``."""

    base_index: int
    indices: np.ndarray
    weights: np.ndarray

    @property
    def order(self):
        return len(self.weights) - 1


def stencil(l, xp, mesh, centering: Literal["cell", "face"] = "cell"):
    """Periodic stencil of the order-``l`` spline centred on ``xp``.

    Cell nodes sit at ``(i + 1/2) dx``, face nodes at ``(i + 1) dx``.  The
    returned arrays have length ``l + 1``; an entry may be zero when the
    particle sits exactly on a node.
    """
    _check_order(l)
    if centering not in ("cell", "face"):
        raise ValueError(f"centering must be 'cell' or 'face', got {centering!r}")
    off = 0.5 if centering == "cell" else 1.0
    xi = xp / mesh.dx - off
    if l == 0:
        base = int(np.floor(xi + 0.5))
        w = np.array([1.0])
    elif l == 1:
        base = int(np.floor(xi))
        f = xi - base
        w = np.array([1.0 - f, f])
    else:
        c = int(np.floor(xi + 0.5))
        f = xi - c
        base = c - 1
        w = np.array([0.5 * (0.5 - f) ** 2, 0.75 - f * f, 0.5 * (0.5 + f) ** 2])
    idx = (base + np.arange(l + 1)) % mesh.n_cells
    return StencilWeights(base % mesh.n_cells, idx, w)
