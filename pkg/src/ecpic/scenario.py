"""Run configuration, presets, particle loading and the run driver.

Units are ion units: ``omega_pi = 1`` and the ion Debye length is the unit
of length, with ``epsilon_0 = 1``.  A species of number density ``n0`` and
charge ``q`` represented by ``N`` macro-particles gives each one charge
``q n0 L / N`` and mass ``m n0 L / N``.
"""
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .grid import Mesh1D
from .ledger import assemble, charge_residual, charge_scale, global_energy_report
from .particles import ImposedB, Particles, PushSettings, scatter_density
from .solver import PicardNonConvergence, SolverConfig, SystemState, advance_step

MTSI_MASS_RATIO = 5000.0
MTSI_LENGTH = 1.8229
MTSI_DRIFT = 0.5
MTSI_GAMMA = 0.4992


class DegenerateWindow(ValueError):
    """Too few samples inside the growth-rate fitting window."""


class RunAborted(RuntimeError):
    """A solver error interrupted a run; partial outputs were flushed."""

    def __init__(self, message, step, outputs):
        super().__init__(message)
        self.step = step
        self.outputs = outputs


@dataclass
class Species:
    name: str
    q: float
    m: float
    density: float = 1.0
    count_per_cell: int = 100
    drift: tuple = (0.0, 0.0, 0.0)
    thermal: tuple = (0.0, 0.0, 0.0)
    magnetized: bool = True

    def __post_init__(self):
        self.drift = tuple(float(c) for c in self.drift)
        self.thermal = tuple(float(c) for c in self.thermal)
        if self.m <= 0 or self.density < 0 or self.count_per_cell < 0:
            raise ValueError(f"species {self.name}: invalid mass, density or count")
        if len(self.drift) != 3 or len(self.thermal) != 3:
            raise ValueError(f"species {self.name}: drift and thermal must be 3-vectors")


@dataclass
class Config:
    """Everything needed to reproduce a run.

    ``amplitude`` is the relative density modulation ``dn/n`` imposed on the
    species named by ``perturb_species`` through a position displacement of
    ``amplitude / k`` at wavenumber ``k = 2 pi mode / L``.  Being a physical
    quantity, it gives the same initial state at any resolution.
    """

    n_cells: int = 32
    length: float = MTSI_LENGTH
    dt: float = 0.1
    n_steps: int = 100
    species: list = field(default_factory=list)
    B: tuple = (0.0, 0.0, 0.0)
    spline_order: int = 2
    picard_tol: float = 1e-13
    max_picard: int = 200
    picard_norm: str = "relative"
    substep_tol: float = 1e-14
    substep_max_iter: int = 50
    gyro_fraction: float = 0.1
    max_substeps: int = 10_000
    output_every: int = 1
    ledger_every: int = 0
    ledger_steps: tuple = ()
    check_every: int = 1
    rng_seed: int = 0
    jitter: float = 0.0
    mode: int = 1
    amplitude: float = 0.0
    perturb_species: str = "ion"
    name: str = "custom"

    def __post_init__(self):
        self.species = [s if isinstance(s, Species) else Species(**s) for s in self.species]
        self.B = tuple(float(c) for c in self.B)
        self.ledger_steps = tuple(int(s) for s in self.ledger_steps)
        if self.n_cells < 4 or self.length <= 0 or self.dt <= 0 or self.n_steps < 0:
            raise ValueError("n_cells >= 4, length > 0, dt > 0 and n_steps >= 0 are required")
        if self.spline_order not in (1, 2):
            raise ValueError("spline_order must be 1 or 2")
        if self.output_every < 1:
            raise ValueError("output_every must be positive")
        if not 0 <= self.jitter <= 1:
            raise ValueError("jitter is a fraction of the particle spacing in [0, 1]")

    @property
    def mesh(self):
        return Mesh1D.from_length(self.n_cells, self.length)

    def solver_config(self):
        push = PushSettings.for_order(self.spline_order, tol=self.substep_tol,
                                      max_iter=self.substep_max_iter,
                                      gyro_fraction=self.gyro_fraction,
                                      max_substeps=self.max_substeps)
        return SolverConfig(self.dt, self.picard_tol, self.max_picard, self.picard_norm, push)

    def imposed_field(self):
        exempt = tuple(i for i, s in enumerate(self.species) if not s.magnetized)
        return ImposedB(self.B, exempt)

    def net_charge_density(self):
        return sum(s.q * s.density for s in self.species)

    def plasma_frequency(self, name):
        s = self.species_by_name(name)
        return math.sqrt(s.density * s.q * s.q / s.m)

    def cyclotron_frequency(self, name):
        s = self.species_by_name(name)
        if not s.magnetized:
            return 0.0
        return abs(s.q) * math.sqrt(sum(c * c for c in self.B)) / s.m

    def species_by_name(self, name):
        for s in self.species:
            if s.name == name:
                return s
        raise KeyError(name)


def preset_mtsi(**overrides):
    """Modified two-stream setup in ion units: drifting ions, magnetized electrons at rest.

    Ions are unmagnetized: their gyrofrequency (0.14) is well below the growth
    rate, and a magnetized drifting ion beam would rotate its drift out of the
    x direction within a few growth times because a 1D electrostatic model has
    no field to hold it.  Set ``ion.magnetized=true`` to keep ion gyration.
    """
    me = 1.0 / MTSI_MASS_RATIO
    b = 1.0 / math.sqrt(50.0)
    sin_t = math.sqrt(me)
    cos_t = math.sqrt(1.0 - me)
    wce = b / me
    cfg = Config(
        n_cells=32, length=MTSI_LENGTH, dt=0.2 / wce, n_steps=2000,
        species=[Species("ion", 1.0, 1.0, 1.0, 100, (MTSI_DRIFT, 0.0, 0.0), magnetized=False),
                 Species("electron", -1.0, me, 1.0, 100)],
        B=(b * sin_t, b * cos_t, 0.0), mode=1, amplitude=2e-5, perturb_species="ion",
        name="mtsi")
    return apply_overrides(cfg, overrides)


def preset_two_stream(**overrides):
    """Electrostatic two-stream: counter-streaming electron beams on heavy ions.

    Electron units here: total electron plasma frequency 1, beams at
    ``+-1``, box holding the fastest-growing cold-beam mode.
    """
    k = math.sqrt(3.0 / 8.0)
    cfg = Config(
        n_cells=64, length=2.0 * math.pi / k, dt=0.05, n_steps=600,
        species=[Species("beam+", -1.0, 1.0, 0.5, 50, (1.0, 0.0, 0.0)),
                 Species("beam-", -1.0, 1.0, 0.5, 50, (-1.0, 0.0, 0.0)),
                 Species("ion", 1.0, 1836.0, 1.0, 50)],
        mode=1, amplitude=1e-4, perturb_species="beam+", name="two-stream")
    return apply_overrides(cfg, overrides)


PRESETS = {"mtsi": preset_mtsi, "two-stream": preset_two_stream}


def _coerce(current, text):
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        return tuple(float(p) if current and isinstance(current[0], float) else int(p)
                     for p in parts) if current else tuple(float(p) for p in parts)
    return text


def apply_overrides(cfg, overrides):
    """Return ``cfg`` with top-level fields or ``<species>.<field>`` replaced.

    String values are converted to the type of the field they replace.
    """
    cfg = replace(cfg, species=[replace(s) for s in cfg.species])
    names = {f.name for f in fields(Config)}
    for key, value in overrides.items():
        if "." in key:
            sname, attr = key.split(".", 1)
            sp = cfg.species_by_name(sname)
            if attr not in {f.name for f in fields(Species)}:
                raise KeyError(f"unknown species field {attr!r}")
            cur = getattr(sp, attr)
            setattr(sp, attr, _coerce(cur, value) if isinstance(value, str) else value)
            sp.__post_init__()
        elif key in names:
            cur = getattr(cfg, key)
            setattr(cfg, key, _coerce(cur, value) if isinstance(value, str) else value)
        else:
            raise KeyError(f"unknown config key {key!r}")
    cfg.__post_init__()
    return cfg


def load_particles(cfg, mesh=None):
    """Quiet-start loading: equispaced particles with optional seeded jitter.

    Every species gets ``count_per_cell`` particles per cell on the same
    lattice, so species of equal density start exactly neutral; thermal
    spread and jitter draw from one generator seeded by ``rng_seed``.
    """
    mesh = mesh or cfg.mesh
    L = mesh.length
    rng = np.random.default_rng(cfg.rng_seed)
    k = 2.0 * math.pi * cfg.mode / L
    parts = []
    for sid, sp in enumerate(cfg.species):
        npart = sp.count_per_cell * mesh.n_cells
        if npart == 0:
            continue
        spacing = L / npart
        x = (np.arange(npart) + 0.5) * spacing
        if cfg.jitter > 0:
            x = x + cfg.jitter * spacing * (rng.random(npart) - 0.5)
        if cfg.amplitude != 0 and sp.name == cfg.perturb_species:
            x = x + (cfg.amplitude / k) * np.cos(k * x)
        x = np.mod(x, L)
        x[x >= L] = 0.0
        v = np.tile(np.asarray(sp.drift), (npart, 1))
        if any(sp.thermal):
            v = v + rng.standard_normal((npart, 3)) * np.asarray(sp.thermal)
        qp = sp.q * sp.density * L / npart
        mp = sp.m * sp.density * L / npart
        parts.append(Particles(x, v, np.full(npart, qp), np.full(npart, mp),
                               np.full(npart, sid)))
    return Particles.concat(parts)


def gauss_field(particles, mesh):
    """Zero-mean face field with ``div E = rho - <rho>``."""
    rho = scatter_density(particles, mesh, 2)
    rho = rho - math.fsum(rho) / len(rho)
    E = np.zeros(mesh.n_cells)
    acc = 0.0
    comp = 0.0
    for i in range(mesh.n_cells):
        y = mesh.dx * rho[i] - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
        E[i] = acc
    return E - math.fsum(E) / len(E)


def initial_state(cfg):
    mesh = cfg.mesh
    particles = load_particles(cfg, mesh)
    return SystemState(particles, gauss_field(particles, mesh), mesh)


TIMESERIES_COLUMNS = ("t", "kinetic", "field_energy", "total", "drift", "picard_iters",
                      "max_residue", "sumD", "max_charge_residual")


@dataclass
class RunOutputs:
    timeseries: list
    ledgers: dict
    state: SystemState
    config: Config
    wall_time: float = 0.0
    breaches: list = field(default_factory=list)
    initial_energy: float = math.nan
    checks: list = field(default_factory=list)

    def worst(self, kind):
        """Largest relative ``residue``, ``sumD`` or ``charge`` over checked steps."""
        col = {"residue": 1, "sumD": 2, "charge": 3}[kind]
        return max((c[col] for c in self.checks), default=0.0)

    def column(self, name):
        return np.array([row[name] for row in self.timeseries])


def run(cfg, out_dir=None, callback=None, tolerances=None):
    """Step the solver ``cfg.n_steps`` times, collecting diagnostics.

    A ledger is assembled on every step where diagnostics are checked
    (``check_every``).  Per-cell ledgers are kept at ``ledger_steps`` and
    every ``ledger_every`` steps.  When ``tolerances`` (keys ``residue``,
    ``sumD``, ``charge``) is given, steps exceeding them are listed in
    ``breaches``.  On a solver error partial outputs are written and
    :class:`RunAborted` is raised.
    """
    t0 = time.perf_counter()
    state = initial_state(cfg)
    mesh = state.mesh
    scfg = cfg.solver_config()
    B = cfg.imposed_field()
    e0 = global_energy_report(state.particles, state.E, mesh)
    rows = []
    ledgers = {}
    breaches = []
    keep = set(cfg.ledger_steps)
    from .particles import _Workspace
    ws = _Workspace(2 * len(state.particles) + 16)
    outputs = RunOutputs(rows, ledgers, state, cfg, initial_energy=e0.total)
    try:
        for step in range(1, cfg.n_steps + 1):
            old = state
            state, diag = advance_step(old, scfg, B, ws)
            want_ledger = step in keep or (cfg.ledger_every and step % cfg.ledger_every == 0)
            check = cfg.check_every and step % cfg.check_every == 0
            max_res = sum_d = max_q = math.nan
            if check or want_ledger:
                led = assemble(old.E, state.E, diag.records, diag.jbar, diag.mean_current,
                               mesh, scfg.dt, cfg.spline_order)
                rho0 = scatter_density(old.particles, mesh)
                rho1 = scatter_density(state.particles, mesh)
                qres = charge_residual(rho0, rho1, diag.jbar, scfg.dt, mesh)
                qscale = charge_scale(old.particles, mesh, scfg.dt)
                max_res = led.max_residue()
                sum_d = led.sumD
                max_q = float(np.max(np.abs(qres)))
                rel_q = max_q / qscale if qscale > 0 else max_q
                outputs.checks.append((step, led.relative_residue(), led.relative_sumD(), rel_q))
                if tolerances:
                    _record_breaches(breaches, step, led, max_q, qscale, tolerances)
                if want_ledger:
                    ledgers[step] = led
            if step % cfg.output_every == 0 or step == cfg.n_steps:
                rep = global_energy_report(state.particles, state.E, mesh, e0.total)
                rows.append(_row(state, rep, e0.total, diag.picard_iterations,
                                 max_res, sum_d, max_q))
            outputs.state = state
            if callback is not None:
                callback(step, state, diag)
    except (PicardNonConvergence, RuntimeError) as exc:
        outputs.wall_time = time.perf_counter() - t0
        outputs.breaches = breaches
        if out_dir is not None:
            write_outputs(outputs, out_dir)
        raise RunAborted(f"step {state.step_index + 1}: {exc}", state.step_index + 1,
                         outputs) from exc
    outputs.wall_time = time.perf_counter() - t0
    outputs.breaches = breaches
    if out_dir is not None:
        write_outputs(outputs, out_dir)
    return outputs


def _record_breaches(breaches, step, led, max_q, qscale, tol):
    if "residue" in tol and led.relative_residue() > tol["residue"]:
        breaches.append((step, "residue", led.relative_residue()))
    if "sumD" in tol and led.relative_sumD() > tol["sumD"] and led.sumD_above_roundoff():
        breaches.append((step, "sumD", led.relative_sumD()))
    if "charge" in tol and qscale > 0 and max_q / qscale > tol["charge"]:
        breaches.append((step, "charge", max_q / qscale))


def _row(state, rep, e_ref, iters, max_res, sum_d, max_q):
    return {"t": state.time, "kinetic": rep.kinetic, "field_energy": rep.field,
            "total": rep.total, "drift": rep.drift_vs_initial, "picard_iters": iters,
            "max_residue": max_res, "sumD": sum_d, "max_charge_residual": max_q}


def write_outputs(outputs, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_timeseries(out / "timeseries.csv", outputs.timeseries)
    for step, led in sorted(outputs.ledgers.items()):
        io.write_ledger(out / f"ledger_{step}.csv", led)
    meta = config_to_flat(outputs.config)
    meta["wall_time"] = outputs.wall_time
    meta["steps_completed"] = outputs.state.step_index
    meta["breaches"] = len(outputs.breaches)
    meta["initial_total_energy"] = outputs.initial_energy
    io.write_meta(out / "run_meta.txt", meta)


def config_to_flat(cfg):
    flat = {}
    for key, value in asdict(cfg).items():
        if key == "species":
            for sp in value:
                for sk, sv in sp.items():
                    if sk != "name":
                        flat[f"{sp['name']}.{sk}"] = sv
        else:
            flat[key] = value
    return flat


def fit_growth_rate(timeseries, t_start, t_end, min_samples=10):
    """Least-squares growth rate of the field amplitude over a time window.

    The field energy grows as ``exp(2 gamma t)``, so gamma is half the slope
    of ``ln(field_energy)``.
    """
    if isinstance(timeseries, dict):
        t = np.asarray(timeseries["t"], dtype=float)
        w = np.asarray(timeseries["field_energy"], dtype=float)
    else:
        t = np.array([row["t"] for row in timeseries], dtype=float)
        w = np.array([row["field_energy"] for row in timeseries], dtype=float)
    sel = (t >= t_start) & (t <= t_end)
    if sel.sum() < min_samples:
        raise DegenerateWindow(
            f"{int(sel.sum())} samples in [{t_start}, {t_end}], need {min_samples}")
    if np.any(w[sel] <= 0):
        raise DegenerateWindow("field energy must be positive on the window")
    slope = np.polyfit(t[sel], np.log(w[sel]), 1)[0]
    return 0.5 * float(slope)


def error_norm(ledger):
    """Mean absolute numerical source ``mean_i |D_i|``."""
    D = ledger.D if hasattr(ledger, "D") else np.asarray(ledger, dtype=float)
    return float(np.mean(np.abs(D)))
