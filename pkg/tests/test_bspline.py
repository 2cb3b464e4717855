import numpy as np
import pytest
from hypothesis import given, strategies as st

from ecpic.bspline import shape, shape_dd, shape_tilde, stencil
from ecpic.grid import Mesh1D

finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.mark.parametrize("l, delta, expected", [
    (1, 0.0, 1.0), (2, 0.0, 0.75), (2, 1.0, 0.125), (0, 0.6, 0.0), (0, 0.5, 1.0),
    (0, -0.5, 0.0), (1, 0.25, 0.75), (2, 1.5, 0.0), (2, -1.0, 0.125),
])
def test_shape_values(l, delta, expected):
    assert shape(l, delta) == expected


@pytest.mark.parametrize("l", [0, 1, 2])
def test_shape_integrates_to_one_cell(l):
    d = np.linspace(-2, 2, 400001)
    assert np.trapezoid(shape(l, d), d) == pytest.approx(1.0, abs=2e-5)


def test_shape_rejects_unknown_order():
    with pytest.raises(ValueError):
        shape(3, 0.0)
    with pytest.raises(ValueError):
        shape_dd(0, 0.0, 1.0)


def test_shape_dd_values():
    assert shape_dd(2, 0.0, 1.0) == -2.0
    assert shape_dd(2, 1.0, 1.0) == 1.0
    assert shape_dd(2, 0.0, 0.5) == -8.0
    assert shape_dd(1, 0.3, 1.0) == 0.0
    # right-limit at the breakpoints
    assert shape_dd(2, 0.5, 1.0) == 1.0
    assert shape_dd(2, -0.5, 1.0) == -2.0
    assert shape_dd(2, 1.5, 1.0) == 0.0


def test_shape_tilde_hand_value():
    assert shape_tilde(2, 0.0, 1.0, 0.4, 1.0) == pytest.approx(0.71, abs=1e-15)


@given(st.floats(-2, 2), finite)
def test_shape_tilde_reduces_without_motion(delta, vx):
    assert shape_tilde(2, delta, vx, 0.0, 1.0) == shape(2, delta)
    assert shape_tilde(2, delta, 0.0, 0.3, 1.0) == shape(2, delta)


def test_stencil_examples():
    mesh = Mesh1D(8, 1.0)
    s = stencil(2, 3.5, mesh)
    np.testing.assert_array_equal(s.weights, [0.125, 0.75, 0.125])
    np.testing.assert_array_equal(s.indices, [2, 3, 4])
    s = stencil(1, 4.0, mesh, "face")
    assert list(s.weights[s.weights != 0]) == [1.0]
    assert s.indices[np.argmax(s.weights)] == 3
    s = stencil(2, 0.1, mesh)
    assert list(s.indices) == [7, 0, 1]


def test_stencil_partition_of_unity_random(rng):
    mesh = Mesh1D(16, 0.37)
    for xp in rng.uniform(0, mesh.length, 10_000):
        for l in (0, 1, 2):
            for c in ("cell", "face"):
                w = stencil(l, xp, mesh, c).weights
                assert abs(w.sum() - 1.0) <= 1e-15
                assert np.all(w >= 0)


@given(st.floats(0, 1, exclude_max=True), st.sampled_from([0, 1, 2]),
       st.sampled_from(["cell", "face"]))
def test_stencil_partition_of_unity(frac, l, centering):
    mesh = Mesh1D(12, 0.1)
    w = stencil(l, frac * mesh.length, mesh, centering).weights
    assert abs(w.sum() - 1.0) <= 1e-15


@given(st.floats(-1.45, 1.45), st.sampled_from([1, 2]))
def test_derivative_is_face_difference_of_lower_order(delta, l):
    breaks = np.array([-1.5, -0.5, 0.5, 1.5]) if l == 2 else np.array([-1.0, 0.0, 1.0])
    if np.min(np.abs(delta - breaks)) < 1e-4:
        return
    h = 1e-6
    # d/dx_p S_l(x_node - x_p) with delta = x_node - x_p in cell units
    fd = -(shape(l, delta + h) - shape(l, delta - h)) / (2 * h)
    face = shape(l - 1, delta - 0.5) - shape(l - 1, delta + 0.5)
    assert abs(fd - face) <= 1e-8


@given(st.floats(0, 1, exclude_max=True))
def test_shape_dd_sums_to_zero_over_stencil(frac):
    nodes = np.arange(-3, 4)
    dd = shape_dd(2, nodes - frac, 1.0)
    assert dd.sum() == 0.0


@given(st.floats(0, 1, exclude_max=True), st.floats(-50, 50), st.floats(0, 2))
def test_shape_tilde_partition_of_unity(frac, vx, dtau):
    nodes = np.arange(-3, 4)
    total = np.sum(shape_tilde(2, nodes - frac, vx, dtau, 1.0))
    corr = abs(vx * vx * dtau * dtau)
    assert abs(total - 1.0) <= 1e-15 * (1 + corr)
