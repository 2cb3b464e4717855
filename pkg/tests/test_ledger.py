import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_plasma
from ecpic import _kernels as K
from ecpic.bspline import shape_tilde
from ecpic.grid import Mesh1D, div, potential_from_E
from ecpic.ledger import (assemble, charge_residual, charge_scale, face_Ej,
                          field_energy_density, gamma_E_flux, global_energy_report,
                          kinetic_energy_density, kinetic_flux, source_Stilde)
from ecpic.particles import (ImposedB, Particles, PushSettings, SubstepRecords, push_particles,
                             scatter_current, scatter_density)
from ecpic.solver import SolverConfig, SystemState, advance_step

MESH = Mesh1D(8, 1.0)


def _single(x_old, disp, dtau, v_old, dv, q=1.0, m=1.0, ep=0.0):
    floats = np.zeros((1, K.N_RF))
    floats[0, [K.R_TAU, K.R_XOLD, K.R_XNEW, K.R_XMID, K.R_DISP, K.R_EP]] = (
        dtau, x_old, x_old + disp, x_old + 0.5 * disp, disp, ep)
    v_old = np.asarray(v_old, float)
    dv = np.asarray(dv, float)
    vec = np.stack([v_old, v_old + dv, v_old + 0.5 * dv, dv])[None]
    return SubstepRecords(np.zeros(1, dtype=np.int64), floats, vec, np.array([q]),
                          np.array([m]))


def test_kinetic_energy_density_examples(rng):
    assert np.all(kinetic_energy_density(Particles.empty(), MESH) == 0)
    mesh = Mesh1D(8, 0.5)
    p = Particles([3 * 0.5 + 0.25], [[1.0, 0.0, 0.0]], [1.0], [2.0])
    ek = kinetic_energy_density(p, mesh)
    np.testing.assert_allclose(ek[2:5], np.array([0.125, 0.75, 0.125]) / 0.5, rtol=1e-15)
    parts = Particles(rng.uniform(0, 4, 100), rng.normal(size=(100, 3)), 1.0,
                      rng.uniform(0.5, 2, 100))
    for l in (1, 2):
        tot = math.fsum(mesh.dx * kinetic_energy_density(parts, mesh, l))
        assert tot == pytest.approx(parts.kinetic_energy(), rel=1e-13)


def test_field_energy_density_examples(rng):
    assert np.all(field_energy_density(np.zeros(5)) == 0)
    np.testing.assert_array_equal(field_energy_density(np.full(5, 2.0)), 2.0)
    E = rng.normal(size=9)
    assert math.fsum(0.3 * field_energy_density(E)) == pytest.approx(
        math.fsum(0.3 * E ** 2 / 2), rel=1e-14)


def test_kinetic_flux_examples():
    rest = _single(2.3, 0.0, 0.1, [0, 0, 0], [0, 0, 0])
    assert np.all(kinetic_flux(rest, MESH, 0.1) == 0)
    dt = 1e-3
    rec = _single(4.0 - 0.5 * dt, dt, dt, [1.0, 0, 0], [0, 0, 0])
    g = kinetic_flux(rec, MESH, dt)
    assert g[3] == pytest.approx(0.5, rel=1e-12)
    assert np.count_nonzero(np.abs(g) > 1e-12) == 1
    fwd = kinetic_flux(_single(2.3, 0.2, 0.1, [2.0, 1, 0], [0.1, 0, 0.2]), MESH, 0.1)
    back = kinetic_flux(_single(2.5, -0.2, 0.1, [-2.0, 1, 0], [-0.1, 0, 0.2]), MESH, 0.1)
    np.testing.assert_allclose(back, -fwd, rtol=1e-15)


def test_source_examples(rng):
    rec = _single(2.3, 0.25, 0.1, [2.4, 0, 0], [0.2, 0, 0], q=-1.5)
    assert np.all(source_Stilde(rec, np.zeros(8), MESH, 0.1) == 0)
    E = rng.normal(size=8)
    src = source_Stilde(rec, E, MESH, 0.2)
    xm = 2.3 + 0.125
    ep = np.interp(xm, np.arange(1.0, 10.0), np.append(E, E[0]))
    ux = 0.25 / 0.1
    nodes = np.arange(8) + 0.5
    expected = (0.1 * -1.5 * ep * ux / 0.2) * shape_tilde(2, nodes - xm, ux, 0.1, 1.0)
    np.testing.assert_allclose(src, expected, rtol=1e-13, atol=1e-15)
    assert math.fsum(src) == pytest.approx(0.1 * -1.5 * ep * ux / 0.2, rel=1e-14)


def test_face_Ej_examples(rng):
    assert np.all(face_Ej(np.zeros(6), rng.normal(size=6)) == 0)
    np.testing.assert_allclose(face_Ej(np.full(6, 3.0), np.full(6, 0.5)), 1.5)
    E, j = rng.normal(size=7), rng.normal(size=7)
    assert math.fsum(face_Ej(j, E)) == pytest.approx(math.fsum(E * j), rel=1e-13)


def test_gamma_E_examples(rng):
    assert np.all(gamma_E_flux(rng.normal(size=6), 0.0) == 0)
    g = gamma_E_flux(np.full(6, 2.0), 0.3)
    np.testing.assert_allclose(g, -0.6)
    mesh = Mesh1D(12, 0.3)
    E = rng.normal(size=12)
    phi = potential_from_E(E, mesh)
    jm = 0.7
    e0 = E - E.mean()
    np.testing.assert_allclose(div(gamma_E_flux(phi, jm), mesh),
                               jm * 0.5 * (e0 + np.roll(e0, 1)), atol=1e-13)


def test_zero_particle_ledger_is_zero():
    st_ = SystemState(Particles.empty(), np.zeros(8), MESH)
    new, d = advance_step(st_, SolverConfig(0.1))
    led = assemble(st_.E, new.E, d.records, d.jbar, d.mean_current, MESH, 0.1)
    for name in ("dek_dt", "deps_dt", "div_gamma", "D", "residue", "gamma_K"):
        assert np.all(getattr(led, name) == 0)


def _step(state, B=ImposedB((0.0, 0.2, 0.5)), l=2, dt=0.05):
    cfg = SolverConfig(dt, push=PushSettings.for_order(l))
    new, d = advance_step(state, cfg, B)
    led = assemble(state.E, new.E, d.records, d.jbar, d.mean_current, state.mesh, dt, l,
                   snapshot=(state.particles, new.particles))
    return new, d, led


def test_single_particle_brute_force():
    mesh = Mesh1D(8, 0.5)
    p = Particles([1.37], [[0.9, 0.2, -0.1]], [-1.0], [1.0])
    E0 = 0.1 * np.sin(2 * np.pi * np.arange(8.0) / 8 + 0.4)
    state = SystemState(p, E0 - E0.mean(), mesh)
    new, d, led = _step(state, dt=0.3)
    dt = 0.3
    assert led.max_residue() <= 1e-12 * led.max_term()
    np.testing.assert_allclose(led.dek_dt, led.dek_dt_snapshot, rtol=0,
                               atol=1e-12 * np.abs(led.dek_dt).max())
    E_half = 0.5 * (state.E + new.E)
    deps = (field_energy_density(new.E) - field_energy_density(state.E)) / dt
    np.testing.assert_allclose(led.deps_dt, deps, atol=1e-13 * np.abs(deps).max())
    r = d.records
    gam = np.zeros(8)
    src = np.zeros(8)
    faces = (np.arange(8) + 1.0) * mesh.dx
    cells = (np.arange(8) + 0.5) * mesh.dx
    for k in range(len(r)):
        ek = 0.25 * (r.v_old[k] @ r.v_old[k] + r.v_new[k] @ r.v_new[k])
        xm = r.x_mid[k] % mesh.length
        for s in (-1, 0, 1):
            gam += r.disp[k] * ek * np.maximum(0, 1 - np.abs(faces + s * mesh.length - xm) / mesh.dx)
            ep = r.e_p[k]
            src += (-1.0 * ep * r.disp[k]) * shape_tilde(
                2, (cells + s * mesh.length - xm) / mesh.dx, r.v_mid[k, 0], r.dtau[k], mesh.dx)
    gam /= mesh.dx * dt
    src /= mesh.dx * dt
    np.testing.assert_allclose(led.gamma, gam, atol=1e-13 * np.abs(gam).max())
    np.testing.assert_allclose(led.source_S, src, atol=1e-13 * np.abs(src).max())
    np.testing.assert_allclose(led.face_Ej, face_Ej(d.jbar, E_half), rtol=1e-15)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]))
def test_random_plasma_balance(seed, l):
    state = make_plasma(seed, drift=0.4)
    new, d, led = _step(state, l=l)
    assert led.relative_residue() <= 1e-10
    assert led.relative_sumD() <= 1e-12
    assert led.source_gross >= np.abs(led.source_S).sum() * (1 - 1e-12)
    assert not led.sumD_above_roundoff()
    np.testing.assert_allclose(div(led.gamma_K, state.mesh), led.D, rtol=0,
                               atol=1e-12 * np.abs(led.D).max())
    # gauge: a constant added to gamma_K changes no divergence
    assert np.max(np.abs(div(led.gamma_K + 3.7, state.mesh) - led.D)) <= 1e-11 * np.abs(led.D).max()
    assert abs(math.fsum(led.residue)) <= 1e-13 * led.max_term() * len(led.residue)
    np.testing.assert_allclose(led.dek_dt, led.dek_dt_snapshot, rtol=0,
                               atol=1e-10 * led.max_term())


def test_reflection_symmetry():
    state = make_plasma(11)
    mesh = state.mesh
    n = mesh.n_cells
    p = state.particles
    mx = np.mod(mesh.length - p.x, mesh.length)
    mv = p.v * np.array([-1.0, 1.0, 1.0])
    # face k maps to face n-2-k; E is a polar vector and flips sign
    mE = -np.roll(state.E[::-1], -1)
    mirror = SystemState(Particles(mx, mv, p.q, p.m, p.species), mE, mesh)
    B = ImposedB((0.3, 0.0, 0.0))
    _, _, a = _step(state, B)
    _, _, b = _step(mirror, B)
    scale = np.abs(a.gamma).max()
    np.testing.assert_allclose(-np.roll(b.gamma[::-1], -1), a.gamma, atol=1e-12 * scale)
    gk = -np.roll(b.gamma_K[::-1], -1)
    np.testing.assert_allclose(gk - gk.mean(), a.gamma_K - a.gamma_K.mean(),
                               atol=1e-10 * np.abs(a.gamma_K).max())
    np.testing.assert_allclose(np.abs(b.residue[::-1]).max(), np.abs(a.residue).max(),
                               atol=1e-10 * a.max_term())


def test_mean_field_shows_up_as_uniform_work():
    mesh = Mesh1D(8, 0.5)
    p = Particles([1.37], [[0.9, 0.2, -0.1]], [-1.0], [1.0])
    state = SystemState(p, 0.1 * np.sin(np.arange(8.0)) + 0.05, mesh)
    _, d, led = _step(state, dt=0.3)
    assert abs(led.mean_field_work) > 1e-3
    np.testing.assert_allclose(led.residue, led.mean_field_work, rtol=0,
                               atol=1e-12 * led.max_term())


def test_charge_residual_examples():
    mesh = Mesh1D(8, 1.0)
    assert np.all(charge_residual(np.zeros(8), np.zeros(8), np.zeros(8), 0.1, mesh) == 0)
    for x0, vx in ((3.3, 0.5), (3.3, 1.2), (3.7, -3.0)):
        p = Particles([x0], [[vx, 0, 0]], [1.0], [1.0])
        new, rec = push_particles(p, np.zeros(8), ImposedB(), 0.4, mesh)
        res = charge_residual(scatter_density(p, mesh), scatter_density(new, mesh),
                              scatter_current(rec, mesh, 0.4), 0.4, mesh)
        assert np.max(np.abs(res)) <= 1e-13 * charge_scale(p, mesh, 0.4)
    assert charge_scale(Particles.empty(), mesh, 0.1) == 0.0


def test_global_energy_report():
    mesh = Mesh1D(8, 0.5)
    p = Particles(np.arange(8) * 0.5 + 0.25, np.zeros((8, 3)), 1.0, 1.0)
    rep = global_energy_report(p, np.zeros(8), mesh)
    assert rep.drift_vs_initial == 0.0 and rep.total == 0.0
    p = Particles([0.3], [[1.0, 2.0, 0.0]], [1.0], [2.0])
    rep = global_energy_report(p, np.full(8, 2.0), mesh, initial_total=20.0)
    assert rep.kinetic == 5.0 and rep.field == 8.0
    assert rep.drift_vs_initial == pytest.approx(-7.0 / 20.0)
