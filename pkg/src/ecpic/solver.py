"""Outer Picard iteration coupling the orbit-averaged push to the Ampere update."""
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Mesh1D
from .particles import ImposedB, Particles, PushSettings, SubstepRecords, _Workspace
from .particles import push_particles, scatter_current

PICARD_NORMS = ("relative", "unit")


class PicardNonConvergence(RuntimeError):
    """Raised when the field iterate fails to settle; carries the diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class SystemState:
    particles: Particles
    E: np.ndarray
    mesh: Mesh1D
    time: float = 0.0
    step_index: int = 0

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=float)
        if self.E.shape != (self.mesh.n_cells,):
            raise ValueError("E must have one value per face")
        if not np.all(np.isfinite(self.E)):
            raise ValueError("E must be finite")


@dataclass(frozen=True)
class SolverConfig:
    """Time step and nonlinear-solve settings.

    ``picard_norm`` selects the scale that divides the max-norm change of
    the field iterate: ``"relative"`` uses ``max(max|E|, dt * max|jbar|)``,
    ``"unit"`` uses ``max(1, max|E|)``.
    """

    dt: float
    picard_tol: float = 1e-13
    max_picard: int = 200
    picard_norm: str = "relative"
    push: PushSettings = field(default_factory=PushSettings)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.picard_tol < 1:
            raise ValueError("picard_tol must lie in (0, 1)")
        if self.max_picard < 1:
            raise ValueError("max_picard must be positive")
        if self.picard_norm not in PICARD_NORMS:
            raise ValueError(f"picard_norm must be one of {PICARD_NORMS}")


@dataclass
class StepDiagnostics:
    picard_iterations: int
    final_residual: float
    jbar: np.ndarray
    records: SubstepRecords
    mean_current: float
    E_half: np.ndarray
    history: list = field(default_factory=list)


def mean_current(jbar):
    jbar = np.asarray(jbar, dtype=float)
    return math.fsum(jbar) / len(jbar) if jbar.size else 0.0


def ampere_update(E_n, jbar, jmean, dt):
    """``E^{n+1} = E^n - dt (jbar - <j>)`` face by face."""
    return np.asarray(E_n, dtype=float) - dt * (np.asarray(jbar, dtype=float) - jmean)


def _residual(E_new, E_old, jbar, cfg):
    change = float(np.max(np.abs(E_new - E_old))) if E_new.size else 0.0
    if change == 0.0:
        return 0.0
    if cfg.picard_norm == "unit":
        scale = max(1.0, float(np.max(np.abs(E_new))))
    else:
        scale = max(float(np.max(np.abs(E_new))), cfg.dt * float(np.max(np.abs(jbar))))
    return change / scale if scale > 0 else math.inf


def advance_step(state, cfg, B=ImposedB(), workspace=None):
    """Advance particles and field from ``t^n`` to ``t^{n+1}``.

    Each iterate re-pushes every particle from the saved ``n`` state under
    ``E_half = (E^n + E^{n+1,k}) / 2``; the records of the last push are the
    ones returned.  Raises :class:`PicardNonConvergence` (state untouched)
    if ``max_picard`` iterates do not settle.
    """
    mesh = state.mesh
    ws = workspace if workspace is not None else _Workspace(2 * len(state.particles) + 16)
    E_n = state.E
    E_next = E_n.copy()
    history = []
    for k in range(1, cfg.max_picard + 1):
        E_half = 0.5 * (E_n + E_next)
        moved, recs = push_particles(state.particles, E_half, B, cfg.dt, mesh, cfg.push, ws,
                                     copy_records=False)
        jbar = scatter_current(recs, mesh, cfg.dt)
        jm = mean_current(jbar)
        E_new = ampere_update(E_n, jbar, jm, cfg.dt)
        res = _residual(E_new, E_next, jbar, cfg)
        history.append(res)
        E_next = E_new
        if res <= cfg.picard_tol:
            diag = StepDiagnostics(k, res, jbar, recs.copy(), jm, E_half, history)
            new_state = SystemState(moved, E_new, mesh, state.time + cfg.dt, state.step_index + 1)
            return new_state, diag
    diag = StepDiagnostics(cfg.max_picard, history[-1], jbar, recs.copy(), jm, E_half,
                           history)
    raise PicardNonConvergence(
        f"step {state.step_index}: residual {history[-1]:.3e} after {cfg.max_picard} iterates",
        diag)
