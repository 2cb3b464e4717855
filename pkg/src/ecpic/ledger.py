"""Per-cell energy ledger of a converged step.

Balance checked in every cell::

    dek_dt + deps_dt + div(gamma - gamma_E) - D = residue

For a field with a nonzero mean the residue also contains the uniform
exchange ``<j> <E>`` in every cell, reported as ``mean_field_work``.

``dek_dt`` is accumulated sub-step by sub-step from the push records, which
keeps it free of the cancellation that differencing two snapshots of a
drifting species' kinetic-energy moment would cause.  The snapshot form is
available through the ``snapshot`` argument of :func:`assemble` as a cross-check.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .grid import antiderivative, div, face_avg, potential_from_E
from .particles import scatter_density

PANELS = ("dek_dt", "deps_dt", "div_gamma", "div_gamma_E", "D")


@dataclass(frozen=True)
class EnergyLedger:
    dek_dt: np.ndarray
    deps_dt: np.ndarray
    gamma: np.ndarray
    div_gamma: np.ndarray
    gamma_E: np.ndarray
    div_gamma_E: np.ndarray
    source_S: np.ndarray
    face_Ej: np.ndarray
    D: np.ndarray
    gamma_K: np.ndarray
    residue: np.ndarray
    sumD: float
    straddling_segments: int = 0
    dek_dt_snapshot: np.ndarray = None
    mean_field_work: float = 0.0
    source_gross: float = 0.0

    def max_term(self):
        return max(float(np.max(np.abs(getattr(self, name)))) for name in PANELS)

    def max_residue(self):
        return float(np.max(np.abs(self.residue)))

    def relative_residue(self):
        scale = self.max_term()
        return self.max_residue() / scale if scale > 0 else self.max_residue()

    def relative_sumD(self):
        scale = float(np.max(np.abs(self.D)))
        return abs(self.sumD) / scale if scale > 0 else abs(self.sumD)

    def sumD_above_roundoff(self):
        """Whether ``sum(D)`` exceeds the rounding floor of the gross deposit.

        When species currents cancel, ``D`` can be far smaller than the
        per-particle source terms it is built from, and its sum is then
        limited by their rounding rather than by ``max|D|``.
        """
        return abs(self.sumD) > np.finfo(float).eps * self.source_gross


def kinetic_energy_density(particles, mesh, l=2):
    """``(1/dx) sum_p m_p |v_p|^2 / 2 S_l(x_i - x_p)``."""
    if l not in (1, 2):
        raise ValueError("l must be 1 or 2")
    w = 0.5 * particles.m * np.einsum("ij,ij->i", particles.v, particles.v)
    return K.deposit(particles.x, w, mesh.n_cells, mesh.dx, l)


def field_energy_density(E):
    """``(E[i+1/2]^2 + E[i-1/2]^2) / 4`` on cells."""
    E = np.asarray(E, dtype=float)
    return 0.25 * (E * E + np.roll(E, 1) ** 2)


def _sums(records, E_half, mesh, dt, l):
    if l not in (1, 2):
        raise ValueError("l must be 1 or 2")
    E_half = np.ascontiguousarray(E_half, dtype=float)
    return K.ledger_sums(len(records), records.particle, records.floats, records.vectors,
                         records.q, records.m, E_half, mesh.n_cells, mesh.dx, dt, l)


def kinetic_energy_rate(records, mesh, dt, l=2):
    """Rate of change of the cell kinetic-energy moment, summed over sub-steps."""
    return _sums(records, np.zeros(mesh.n_cells), mesh, dt, l)[0]


def kinetic_flux(records, mesh, dt, l=2):
    """Face flux ``(1/(dx dt)) sum dtau S_{l-1}(face - x_mid) vx_mid e_kp``.

    ``e_kp`` is the sub-step average of the particle kinetic energy and the
    product ``dtau * vx_mid`` is taken as the recorded displacement.
    """
    _, hi, lo, _, _, _ = _sums(records, np.zeros(mesh.n_cells), mesh, dt, l)
    return hi + lo


def source_Stilde(records, E_half, mesh, dt, l=2):
    """Cell E.j source deposited with the time-corrected spline."""
    return _sums(records, E_half, mesh, dt, l)[3]


def face_Ej(jbar, E_half, jmean=0.0):
    """``(E[i+1/2] jbar[i+1/2] + E[i-1/2] jbar[i-1/2]) / 2``.

    ``jmean`` is accepted for symmetry with :func:`gamma_E_flux`, which
    carries the mean-current part.
    """
    g = np.asarray(E_half, dtype=float) * np.asarray(jbar, dtype=float)
    return 0.5 * (g + np.roll(g, 1))


def gamma_E_flux(phi_half, jmean):
    """``-<j> (phi[i] + phi[i+1]) / 2`` on faces."""
    return -jmean * face_avg(phi_half)


def _field_rate(E_n, E_np1, dt):
    # (E1^2 - E0^2) factored to avoid cancelling the baseline
    g = (E_np1 - E_n) * (E_np1 + E_n)
    return 0.25 * (g + np.roll(g, 1)) / dt


def assemble(E_n, E_np1, records, jbar, jmean, mesh, dt, l=2, E_half=None,
             zero_sum_tol=1e-9, snapshot=None):
    """Fill every ledger term for one converged step.

    Parameters
    ----------
    E_n, E_np1 : FaceField
        Field snapshots bracketing the step.
    records : SubstepRecords
        Sub-steps of the final Picard iterate.
    jbar, jmean : FaceField, float
        Orbit-averaged current and its mean.
    E_half : FaceField, optional
        Field used for the E.j terms; defaults to the snapshot average.
    snapshot : tuple of Particles, optional
        ``(particles_n, particles_np1)``; when given, the snapshot form of
        ``dek_dt`` is stored alongside for comparison.
    """
    E_n = np.asarray(E_n, dtype=float)
    E_np1 = np.asarray(E_np1, dtype=float)
    if E_half is None:
        E_half = 0.5 * (E_n + E_np1)
    dek, g_hi, g_lo, src, straddle, gross = _sums(records, E_half, mesh, dt, l)
    div_g = ((g_hi - np.roll(g_hi, 1)) + (g_lo - np.roll(g_lo, 1))) / mesh.dx
    deps = _field_rate(E_n, E_np1, dt)
    gE = gamma_E_flux(potential_from_E(E_half, mesh), jmean)
    div_gE = div(gE, mesh)
    fej = face_Ej(jbar, E_half, jmean)
    D = src - fej
    sumD = math.fsum(D)
    # D is a difference of two deposits; its round-off is relative to them
    ref = max(float(np.max(np.abs(src), initial=0.0)), float(np.max(np.abs(fej), initial=0.0)))
    gK = antiderivative(D, mesh, zero_sum_tol, scale=ref)
    residue = dek + deps + div_g - div_gE - D
    # a uniform field component works on the mean current without any flux;
    # it vanishes for Gauss-consistent fields, whose mean Ampere preserves
    mfw = jmean * math.fsum(E_half) / len(E_half) if len(E_half) else 0.0
    dek_snap = None
    if snapshot is not None:
        p0, p1 = snapshot
        dek_snap = (kinetic_energy_density(p1, mesh, l) - kinetic_energy_density(p0, mesh, l)) / dt
    return EnergyLedger(dek, deps, g_hi + g_lo, div_g, gE, div_gE, src, fej, D, gK,
                        residue, sumD, int(straddle), dek_snap, mfw, gross)


def charge_residual(rho_n, rho_np1, jbar, dt, mesh):
    """``(rho^{n+1} - rho^n)/dt + div(jbar)`` on cells."""
    return (np.asarray(rho_np1) - np.asarray(rho_n)) / dt + div(jbar, mesh)


def charge_scale(particles, mesh, dt):
    """Gross charge-rate scale ``max_i sum_s |rho_s,i| / dt``.

    Species are deposited separately so opposite charges do not cancel.
    """
    if len(particles) == 0:
        return 0.0
    total = np.zeros(mesh.n_cells)
    for s in np.unique(particles.species):
        sel = particles.species == s
        total += np.abs(K.deposit(particles.x[sel], particles.q[sel], mesh.n_cells, mesh.dx, 2))
    return float(np.max(total)) / dt


@dataclass(frozen=True)
class EnergyReport:
    kinetic: float
    field: float
    total: float
    drift_vs_initial: float


def global_energy_report(particles, E, mesh, initial_total=None):
    """Domain totals of kinetic and field energy plus relative drift."""
    kin = math.fsum(0.5 * particles.m * np.einsum("ij,ij->i", particles.v, particles.v))
    fld = math.fsum(0.5 * mesh.dx * np.asarray(E, dtype=float) ** 2)
    total = kin + fld
    ref = total if initial_total is None else initial_total
    drift = (total - ref) / abs(ref) if ref != 0 else total - ref
    return EnergyReport(kin, fld, total, drift)


def scatter_rho(particles, mesh):
    return scatter_density(particles, mesh, 2)
