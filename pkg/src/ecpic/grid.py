"""Periodic staggered 1D mesh and its difference operators.

Cell-centred arrays (``CellField``) and face arrays (``FaceField``) are plain
``numpy`` vectors of length ``n_cells``.  Face index ``k`` is the face
between cells ``k`` and ``k + 1``, located at ``(k + 1) dx``; the last face
is therefore also the left face of cell 0.
"""
import math
from dataclasses import dataclass

import numpy as np

CellField = np.ndarray
FaceField = np.ndarray


class ZeroSumViolation(ValueError):
    """A source handed to :func:`antiderivative` does not sum to zero."""


@dataclass(frozen=True)
class Mesh1D:
    n_cells: int
    dx: float

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 4:
            raise ValueError(f"n_cells must be an integer >= 4, got {self.n_cells!r}")
        if not (self.dx > 0 and math.isfinite(self.dx)):
            raise ValueError(f"dx must be positive and finite, got {self.dx!r}")

    @classmethod
    def from_length(cls, n_cells, length):
        return cls(int(n_cells), length / n_cells)

    @property
    def length(self):
        return self.n_cells * self.dx

    @property
    def cell_centers(self):
        return (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def face_positions(self):
        return (np.arange(self.n_cells) + 1.0) * self.dx


def div(f, mesh):
    """``(f[i+1/2] - f[i-1/2]) / dx`` on cells."""
    f = np.asarray(f, dtype=float)
    return (f - np.roll(f, 1)) / mesh.dx


def grad(c, mesh):
    """``(c[i+1] - c[i]) / dx`` on faces."""
    c = np.asarray(c, dtype=float)
    return (np.roll(c, -1) - c) / mesh.dx


def face_avg(c):
    c = np.asarray(c, dtype=float)
    return 0.5 * (c + np.roll(c, -1))


def _kahan_prefix(steps):
    """Running sums ``out[k] = steps[0] + ... + steps[k]`` with compensation."""
    out = np.empty(len(steps))
    s = 0.0
    comp = 0.0
    for k, val in enumerate(steps):
        y = val - comp
        t = s + y
        comp = (t - s) - y
        s = t
        out[k] = s
    return out


def potential_from_E(E, mesh):
    """Cell potential whose gradient is ``-(E - mean(E))``, gauge ``phi[0] = 0``.

    The uniform part of ``E`` has no single-valued periodic potential and is
    dropped.
    """
    E = np.asarray(E, dtype=float)
    e0 = E - math.fsum(E) / len(E)
    phi = np.zeros(len(E))
    phi[1:] = _kahan_prefix(-mesh.dx * e0[:-1])
    return phi


def antiderivative(d, mesh, tol=1e-12, scale=None):
    """Face flux ``G`` with ``div(G) = d`` and ``G[-1/2] = 0``.

    ``scale`` is the magnitude the zero-sum test is measured against; it
    defaults to ``max|d|``.  Pass a larger one when ``d`` is itself a
    difference of bigger terms, so that a source at round-off level is not
    judged against its own noise.

    Raises
    ------
    ZeroSumViolation
        If ``|sum(d)| > tol * scale``; a periodic flux cannot produce a net
        source.
    """
    d = np.asarray(d, dtype=float)
    dmax = float(np.max(np.abs(d))) if d.size else 0.0
    scale = dmax if scale is None else max(float(scale), dmax)
    total = math.fsum(d)
    if abs(total) > tol * scale:
        raise ZeroSumViolation(
            f"source sums to {total:.3e}, above {tol:g} x {scale:.3e}")
    g = np.zeros(len(d))
    if dmax == 0.0:
        return g
    g[:-1] = _kahan_prefix(mesh.dx * d[:-1])
    return g
