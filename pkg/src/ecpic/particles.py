"""Particle storage, field gather, orbit-averaged push and deposition.

Particles are held structure-of-arrays in :class:`Particles`.  The push is an
implicit midpoint rule per sub-step with a uniform imposed magnetic field;
sub-steps stop on a lattice of mesh faces (and cell centres when the
kinetic-energy moment uses linear splines) so every recorded segment lies on
a single polynomial piece of every shape function involved.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .grid import Mesh1D


class SubstepNonConvergence(RuntimeError):
    """The implicit sub-step or its face-landing root did not converge."""


class OrbitBudgetExceeded(RuntimeError):
    """A particle needed more sub-steps than allowed within one step."""


@dataclass(frozen=True)
class ImposedB:
    """Uniform static magnetic field.

    Species ids listed in ``exempt_species`` move as if the field were zero,
    which models species whose gyration is too slow to matter on the time
    scale of interest.
    """

    B: tuple = (0.0, 0.0, 0.0)
    exempt_species: tuple = ()

    def __post_init__(self):
        b = tuple(float(c) for c in self.B)
        if len(b) != 3 or not all(np.isfinite(b)):
            raise ValueError(f"B must be a finite 3-vector, got {self.B!r}")
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "exempt_species", tuple(int(s) for s in self.exempt_species))

    def scale(self, species):
        """Per-particle field factor: 0 for exempt species, 1 otherwise."""
        if not self.exempt_species:
            return np.ones(len(species))
        return np.where(np.isin(species, self.exempt_species), 0.0, 1.0)

    @property
    def magnitude(self):
        return float(np.sqrt(sum(c * c for c in self.B)))


@dataclass(frozen=True)
class PushSettings:
    """Inner-solver knobs for the sub-step push.

    ``stop_sub`` is the number of stopping points per cell: 1 stops on faces
    only, 2 also stops on cell centres.
    """

    tol: float = 1e-14
    max_iter: int = 50
    gyro_fraction: float = 0.1
    max_substeps: int = 10_000
    stop_sub: int = 1

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.max_iter < 1 or self.max_substeps < 1:
            raise ValueError("iteration caps must be positive")
        if self.stop_sub not in (1, 2):
            raise ValueError("stop_sub must be 1 or 2")

    @classmethod
    def for_order(cls, l, **kw):
        return cls(stop_sub=2 if l == 1 else 1, **kw)


@dataclass
class Particle:
    x: float
    v: tuple
    q: float
    m: float
    species_id: int = 0


@dataclass
class Particles:
    x: np.ndarray
    v: np.ndarray
    q: np.ndarray
    m: np.ndarray
    species: np.ndarray = None

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=float).reshape(-1)
        n = len(self.x)
        self.v = np.ascontiguousarray(self.v, dtype=float).reshape(n, 3)
        self.q = np.broadcast_to(np.asarray(self.q, dtype=float), (n,)).copy()
        self.m = np.broadcast_to(np.asarray(self.m, dtype=float), (n,)).copy()
        if self.species is None:
            self.species = np.zeros(n, dtype=np.int64)
        self.species = np.broadcast_to(np.asarray(self.species, dtype=np.int64), (n,)).copy()
        if np.any(self.m <= 0):
            raise ValueError("particle masses must be positive")

    def __len__(self):
        return len(self.x)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros(0), np.ones(0))

    @classmethod
    def from_list(cls, plist):
        if not plist:
            return cls.empty()
        return cls(np.array([p.x for p in plist]), np.array([p.v for p in plist]),
                   np.array([p.q for p in plist]), np.array([p.m for p in plist]),
                   np.array([p.species_id for p in plist]))

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(np.concatenate([p.x for p in parts]), np.concatenate([p.v for p in parts]),
                   np.concatenate([p.q for p in parts]), np.concatenate([p.m for p in parts]),
                   np.concatenate([p.species for p in parts]))

    def __getitem__(self, i):
        return Particle(float(self.x[i]), tuple(float(c) for c in self.v[i]), float(self.q[i]),
                        float(self.m[i]), int(self.species[i]))

    def copy(self):
        return Particles(self.x.copy(), self.v.copy(), self.q.copy(), self.m.copy(),
                         self.species.copy())

    @property
    def qm(self):
        return self.q / self.m

    def kinetic_energy(self):
        return float(np.sum(0.5 * self.m * np.einsum("ij,ij->i", self.v, self.v)))


@dataclass
class SubstepRecords:
    """All sub-steps of one orbit-averaged push, in deterministic order.

    ``disp`` is the unwrapped displacement ``x_new - x_old``; ``dv`` is the
    velocity increment computed from the force (``v_new = v_old + dv``).
    """

    particle: np.ndarray
    floats: np.ndarray
    vectors: np.ndarray
    q: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.particle)

    def copy(self):
        return SubstepRecords(self.particle.copy(), self.floats.copy(), self.vectors.copy(),
                              self.q, self.m)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, K.N_RF)), np.zeros((0, 4, 3)),
                   np.zeros(0), np.ones(0))

    dtau = property(lambda self: self.floats[:, K.R_TAU])
    x_old = property(lambda self: self.floats[:, K.R_XOLD])
    x_new = property(lambda self: self.floats[:, K.R_XNEW])
    x_mid = property(lambda self: self.floats[:, K.R_XMID])
    disp = property(lambda self: self.floats[:, K.R_DISP])
    e_p = property(lambda self: self.floats[:, K.R_EP])
    v_old = property(lambda self: self.vectors[:, K.V_OLD])
    v_new = property(lambda self: self.vectors[:, K.V_NEW])
    v_mid = property(lambda self: self.vectors[:, K.V_MID])
    dv = property(lambda self: self.vectors[:, K.V_DELTA])
    rec_q = property(lambda self: self.q[self.particle])
    rec_m = property(lambda self: self.m[self.particle])


def gather_E(E, xp, mesh):
    """Linear interpolation of the face field ``E`` to positions ``xp``."""
    E = np.asarray(E, dtype=float)
    xi = np.asarray(xp, dtype=float) / mesh.dx - 1.0
    k = np.floor(xi)
    f = xi - k
    k0 = k.astype(np.int64) % mesh.n_cells
    out = (1.0 - f) * E[k0] + f * E[(k0 + 1) % mesh.n_cells]
    return out if out.ndim else float(out)


class _Workspace:
    """Reusable record buffers, grown on demand."""

    def __init__(self, cap=64):
        self._alloc(cap)

    def _alloc(self, cap):
        self.rec_i = np.zeros(cap, dtype=np.int64)
        self.rec_f = np.zeros((cap, K.N_RF))
        self.rec_v = np.zeros((cap, 4, 3))

    @property
    def capacity(self):
        return len(self.rec_i)

    def grow(self, need):
        self._alloc(max(need + need // 4 + 16, 2 * self.capacity))


def push_particles(particles, E_half, B, dt, mesh, settings=PushSettings(), workspace=None,
                   copy_records=True):
    """Orbit-average every particle over ``dt`` under a frozen field iterate.

    Returns the advanced particles and the sub-step records.  With
    ``copy_records=False`` the records are views into ``workspace`` and are
    only valid until its next use.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ws = workspace if workspace is not None else _Workspace(2 * len(particles) + 16)
    E_half = np.ascontiguousarray(E_half, dtype=float)
    if E_half.shape != (mesh.n_cells,):
        raise ValueError("E_half must have one value per face")
    bx, by, bz = B.B
    bscale = B.scale(particles.species)
    qm = particles.qm
    while True:
        x_out = np.empty_like(particles.x)
        v_out = np.empty_like(particles.v)
        status, count, bad = K.push_all(
            particles.x, particles.v, qm, E_half, mesh.n_cells, mesh.dx, dt, bx, by, bz, bscale,
            settings.gyro_fraction, settings.stop_sub, settings.tol, settings.max_iter,
            settings.max_substeps, x_out, v_out, ws.rec_i, ws.rec_f, ws.rec_v)
        if status == K.ERR_CAPACITY:
            ws.grow(count)
            continue
        break
    if status == K.ERR_SUBSTEP:
        raise SubstepNonConvergence(f"particle {bad}: sub-step did not converge")
    if status == K.ERR_BUDGET:
        raise OrbitBudgetExceeded(
            f"particle {bad}: more than {settings.max_substeps} sub-steps in one step")
    new = Particles(x_out, v_out, particles.q, particles.m, particles.species)
    recs = SubstepRecords(ws.rec_i[:count], ws.rec_f[:count], ws.rec_v[:count],
                          particles.q, particles.m)
    if copy_records:
        recs = recs.copy()
    return new, recs


def orbit_average(p, E_half, B, dt, mesh, settings=PushSettings()):
    """Single-particle orbit average; returns ``(particle_at_n+1, records)``."""
    batch = Particles.from_list([p])
    new, recs = push_particles(batch, E_half, B, dt, mesh, settings)
    return new[0], recs


def substep_push(p, E, B, dtau_cap, mesh, tol=1e-14, max_iter=50, stop_sub=1):
    """One face-stopped implicit-midpoint sub-step of length at most ``dtau_cap``.

    Returns ``(particle', records)`` with a single record.
    """
    if dtau_cap <= 0:
        raise ValueError("dtau_cap must be positive")
    E = np.ascontiguousarray(E, dtype=float)
    bx, by, bz = B.B
    ok, tau, _, x1, x1w, ep, ux, uy, uz, dvx, dvy, dvz = K.substep(
        float(p.x), float(p.v[0]), float(p.v[1]), float(p.v[2]), p.q / p.m, float(dtau_cap),
        True, E, mesh.n_cells, mesh.dx, bx, by, bz, stop_sub, tol, max_iter, float(dtau_cap))
    if not ok:
        raise SubstepNonConvergence("sub-step did not converge")
    v_old = np.asarray(p.v, dtype=float)
    dv = np.array([dvx, dvy, dvz])
    v_new = v_old + dv
    floats = np.zeros((1, K.N_RF))
    floats[0, [K.R_TAU, K.R_XOLD, K.R_XNEW, K.R_XMID, K.R_DISP, K.R_EP]] = (
        tau, p.x, x1w, 0.5 * (p.x + x1), x1 - p.x, ep)
    vectors = np.stack([v_old, v_new, np.array([ux, uy, uz]), dv])[None]
    rec = SubstepRecords(np.zeros(1, dtype=np.int64), floats, vectors,
                         np.array([p.q]), np.array([p.m]))
    return replace(p, x=float(x1w), v=tuple(v_new)), rec


def scatter_current(records, mesh, dt):
    """Orbit-averaged face current ``(1/(dx dt)) sum q disp S_1(face - x_mid)``."""
    return K.scatter_current(len(records), records.particle, records.floats, records.q,
                             mesh.n_cells, mesh.dx, dt)


def scatter_density(particles, mesh, l=2):
    """Cell charge density from order-``l`` spline deposition."""
    return K.deposit(particles.x, particles.q, mesh.n_cells, mesh.dx, l)


__all__ = [
    "ImposedB", "Mesh1D", "OrbitBudgetExceeded", "Particle", "Particles", "PushSettings",
    "SubstepNonConvergence", "SubstepRecords", "gather_E", "orbit_average", "push_particles",
    "scatter_current", "scatter_density", "substep_push",
]
