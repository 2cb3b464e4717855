"""Discrete field identities on a periodic staggered 2D mesh.

Layout (arrays indexed ``[i, j]``, axis 0 is x):

* cells ``(i + 1/2, j + 1/2)``: potential ``phi`` and the z-component of A;
* x-faces ``(i + 1, j + 1/2)``: x-components of vectors;
* y-faces ``(i + 1/2, j + 1)``: y-components of vectors;
* corners ``(i + 1, j + 1)``: ``B_z = d_x A_y - d_y A_x``.

A's z-component sits on cells because nothing varies along z; this is a
convention of these kernels, not a statement about a 3D scheme.  Every
``check_*`` kernel returns the largest discrepancy between the two sides of
its identity divided by the largest magnitude of the terms involved.
"""
from dataclasses import dataclass

import numpy as np


class ProjectionFailure(RuntimeError):
    """Divergence cleaning left a residual above tolerance."""


@dataclass(frozen=True)
class Mesh2D:
    nx: int
    ny: int
    dx: float
    dy: float

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("nx and ny must be at least 4")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("dx and dy must be positive")

    @property
    def shape(self):
        return (self.nx, self.ny)


@dataclass(frozen=True)
class StaggeredVector2D:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.x), np.shape(self.y), np.shape(self.z)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ValueError("components must be 2D arrays of one shape")

    @classmethod
    def zeros(cls, mesh):
        return cls(np.zeros(mesh.shape), np.zeros(mesh.shape), np.zeros(mesh.shape))

    @classmethod
    def random(cls, mesh, rng):
        return cls(*(rng.standard_normal(mesh.shape) for _ in range(3)))

    def __add__(self, other):
        return StaggeredVector2D(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other):
        return StaggeredVector2D(self.x - other.x, self.y - other.y, self.z - other.z)

    def scale(self, s):
        return StaggeredVector2D(s * self.x, s * self.y, s * self.z)


def _sh(f, axis, s):
    """Value at index ``k + s`` along ``axis`` (periodic)."""
    return np.roll(f, -s, axis=axis)


def lap(f, mesh):
    """Five-point Laplacian on any of the staggered lattices."""
    return ((_sh(f, 0, 1) - 2 * f + _sh(f, 0, -1)) / mesh.dx ** 2
            + (_sh(f, 1, 1) - 2 * f + _sh(f, 1, -1)) / mesh.dy ** 2)


def grad_cells(phi, mesh):
    """Cell field to (x-face, y-face) gradient."""
    return (_sh(phi, 0, 1) - phi) / mesh.dx, (_sh(phi, 1, 1) - phi) / mesh.dy


def div_faces(fx, fy, mesh):
    return (fx - _sh(fx, 0, -1)) / mesh.dx + (fy - _sh(fy, 1, -1)) / mesh.dy


def face_avg_x(c):
    return 0.5 * (c + _sh(c, 0, 1))


def face_avg_y(c):
    return 0.5 * (c + _sh(c, 1, 1))


def _to_cells_x(f):
    # x-faces either side of a cell
    return 0.5 * (f + _sh(f, 0, -1))


def _to_cells_y(f):
    return 0.5 * (f + _sh(f, 1, -1))


def _corners_to_cells(f):
    return 0.25 * (f + _sh(f, 0, -1) + _sh(f, 1, -1) + _sh(_sh(f, 0, -1), 1, -1))


def curl_z(A, mesh):
    """``d_x A_y - d_y A_x`` on corners."""
    return (_sh(A.y, 0, 1) - A.y) / mesh.dx - (_sh(A.x, 1, 1) - A.x) / mesh.dy


def divergence(A, mesh):
    return div_faces(A.x, A.y, mesh)


def _rel(err, *terms):
    scale = max(float(np.max(np.abs(t))) for t in terms)
    e = float(np.max(np.abs(err)))
    return e / scale if scale > 0 else e


def check_chain_rule_scalar(A, phi, mesh):
    """Summation-by-parts identity, applied along x and along y.

    ``1/2 [A+ (phi+ - phi)/h + A- (phi - phi-)/h] = div(avg(phi) A) - phi div(A)``
    with ``A`` a (x-face, y-face) pair and ``phi`` on cells.
    """
    ax, ay = (A.x, A.y) if isinstance(A, StaggeredVector2D) else A
    gx, gy = grad_cells(phi, mesh)
    lhs = _to_cells_x(ax * gx) + _to_cells_y(ay * gy)
    flux = div_faces(face_avg_x(phi) * ax, face_avg_y(phi) * ay, mesh)
    src = phi * div_faces(ax, ay, mesh)
    return _rel(lhs - (flux - src), lhs, flux, src)


def _chain_line(P, Q, axis, h, q_right):
    """One-dimensional chain identity along ``axis``.

    ``P`` sits on integer points, ``Q`` on the half points between them;
    ``q_right`` says whether ``Q[k]`` lies to the right of ``P[k]``.
    Returns ``(lhs, flux_div, src)``.
    """
    if q_right:
        qp, qm = Q, _sh(Q, axis, -1)
    else:
        qp, qm = _sh(Q, axis, 1), Q
    pp = _sh(P, axis, 1)
    pm = _sh(P, axis, -1)
    lhs = 0.5 * (qp * (pp - P) / h + qm * (P - pm) / h)
    flux = (0.5 * (pp + P) * qp - 0.5 * (P + pm) * qm) / h
    src = P * (qp - qm) / h
    return lhs, flux, src


def _grad_tensor(A, mesh):
    """``d_d A^(c)`` at its natural location, with where its C partner sits.

    Yields ``(P, axis, h, q_right, c)``: along a staggered direction the
    derivative lands between faces (C to the right), otherwise it lands on a
    half point (C to the left).
    """
    h = (mesh.dx, mesh.dy)
    for c, comp in (("x", A.x), ("y", A.y), ("z", A.z)):
        for axis in (0, 1):
            staggered = (c == "x" and axis == 0) or (c == "y" and axis == 1)
            if staggered:
                P = (comp - _sh(comp, axis, -1)) / h[axis]
            else:
                P = (_sh(comp, axis, 1) - comp) / h[axis]
            yield P, axis, h[axis], staggered, c


def check_tensor_chain_rule(A_n, A_np1, dt, mesh):
    """Component-by-component chain identity for ``C . lap(A)``.

    ``C = (A^{n+1} - A^n) / dt`` and the gradients are of the time-centred
    ``A``; every (component, direction) pair is checked on its own lattice.
    """
    A_h = (A_n + A_np1).scale(0.5)
    C = (A_np1 - A_n).scale(1.0 / dt)
    worst = 0.0
    for P, axis, h, q_right, c in _grad_tensor(A_h, mesh):
        Q = getattr(C, c)
        lhs, flux, src = _chain_line(P, Q, axis, h, q_right)
        worst = max(worst, _rel(lhs - (flux - src), lhs, flux, src))
    return worst


def magnetic_energy(A, mesh):
    """Cell magnetic energy ``1/2 grad A : (grad A - grad A^T)``.

    The diagonal products cancel, leaving ``B_z^2 / 2`` from the corners and
    ``(d_x A_z)^2 / 2``, ``(d_y A_z)^2 / 2`` from the faces.
    """
    bz = curl_z(A, mesh)
    ax = (_sh(A.z, 0, 1) - A.z) / mesh.dx
    ay = (_sh(A.z, 1, 1) - A.z) / mesh.dy
    return (_corners_to_cells(0.5 * bz * bz) + _to_cells_x(0.5 * ax * ax)
            + _to_cells_y(0.5 * ay * ay))


def check_magnetic_telescoping(A_n, A_np1, dt, mesh):
    """``(grad A_h - grad A_h^T) : grad C = (M^{n+1} - M^n) / dt`` on cells."""
    A_h = (A_n + A_np1).scale(0.5)
    C = (A_np1 - A_n).scale(1.0 / dt)
    lhs = np.zeros(mesh.shape)
    # diagonal entries cancel between grad and its transpose; off-diagonal
    # xy/yx pairs share the corners, xz and yz pair with zero z-derivatives
    gh = {(c, axis): P for P, axis, _, _, c in _grad_tensor(A_h, mesh)}
    gc = {(c, axis): P for P, axis, _, _, c in _grad_tensor(C, mesh)}
    xy, yx = (("y", 0), ("x", 1))
    corner = (gh[xy] - gh[yx]) * gc[xy] + (gh[yx] - gh[xy]) * gc[yx]
    lhs = (_corners_to_cells(corner) + _to_cells_x(gh[("z", 0)] * gc[("z", 0)])
           + _to_cells_y(gh[("z", 1)] * gc[("z", 1)]))
    rhs = (magnetic_energy(A_np1, mesh) - magnetic_energy(A_n, mesh)) / dt
    return _rel(lhs - rhs, lhs, rhs)


def project_divergence_free(A, mesh, tol=1e-12):
    """Remove the gradient part of the in-plane components of ``A``.

    Solves the periodic five-point Poisson problem ``div grad psi = div A``
    by FFT and returns ``A - grad psi``; the z-component is untouched.
    """
    d = divergence(A, mesh)
    kx = np.fft.fftfreq(mesh.nx) * mesh.nx
    ky = np.fft.fftfreq(mesh.ny) * mesh.ny
    lam = (-(4.0 / mesh.dx ** 2) * np.sin(np.pi * kx / mesh.nx)[:, None] ** 2
           - (4.0 / mesh.dy ** 2) * np.sin(np.pi * ky / mesh.ny)[None, :] ** 2)
    dh = np.fft.fft2(d)
    scale = max(1.0, float(np.max(np.abs(d))))
    if abs(dh[0, 0]) > 1e-10 * scale * d.size:
        raise ProjectionFailure("mean divergence is nonzero; the periodic problem is singular")
    lam[0, 0] = 1.0
    psi_h = dh / lam
    psi_h[0, 0] = 0.0
    psi = np.real(np.fft.ifft2(psi_h))
    gx, gy = grad_cells(psi, mesh)
    out = StaggeredVector2D(A.x - gx, A.y - gy, A.z.copy())
    resid = float(np.max(np.abs(divergence(out, mesh))))
    if resid > tol * scale:
        raise ProjectionFailure(f"residual divergence {resid:.3e} above {tol:g}")
    return out


@dataclass(frozen=True)
class DarwinBalance:
    dM_dt: np.ndarray
    deps_dt: np.ndarray
    div_gamma_E: np.ndarray
    div_gamma_M: np.ndarray
    div_gamma_M2: np.ndarray
    work: np.ndarray

    @property
    def residue(self):
        return (self.dM_dt + self.deps_dt
                - (self.div_gamma_E + self.div_gamma_M + self.div_gamma_M2) + self.work)

    def relative_error(self):
        return _rel(self.residue, self.dM_dt, self.deps_dt, self.div_gamma_E,
                    self.div_gamma_M, self.div_gamma_M2, self.work)


def darwin_balance(phi_n, phi_np1, A_n, A_np1, dt, mesh):
    """Every term of the electromagnetic field-energy balance on cells.

    The current is the one implied by the field equations,
    ``jbar = grad(phi^{n+1} - phi^n)/dt - lap(A_h)``, and the field is
    ``E = -grad(phi_h) - (A^{n+1} - A^n)/dt``.
    """
    A_h = (A_n + A_np1).scale(0.5)
    C = (A_np1 - A_n).scale(1.0 / dt)
    phi_h = 0.5 * (phi_n + phi_np1)
    phi_dot = (phi_np1 - phi_n) / dt
    ghx, ghy = grad_cells(phi_h, mesh)
    gdx, gdy = grad_cells(phi_dot, mesh)
    lx, ly, lz = lap(A_h.x, mesh), lap(A_h.y, mesh), lap(A_h.z, mesh)
    jx, jy, jz = gdx - lx, gdy - ly, -lz
    ex, ey, ez = -ghx - C.x, -ghy - C.y, -C.z
    work = _to_cells_x(ex * jx) + _to_cells_y(ey * jy) + ez * jz

    def eps(phi):
        gx, gy = grad_cells(phi, mesh)
        return 0.5 * (_to_cells_x(gx * gx) + _to_cells_y(gy * gy))

    deps = (eps(phi_np1) - eps(phi_n)) / dt
    dM = (magnetic_energy(A_np1, mesh) - magnetic_energy(A_n, mesh)) / dt
    div_E = div_faces(face_avg_x(phi_h) * lx, face_avg_y(phi_h) * ly, mesh)
    div_M2 = div_faces(-face_avg_x(phi_dot) * C.x, -face_avg_y(phi_dot) * C.y, mesh)
    bz = curl_z(A_h, mesh)
    dzx = (_sh(A_h.z, 0, 1) - A_h.z) / mesh.dx
    dzy = (_sh(A_h.z, 1, 1) - A_h.z) / mesh.dy
    # corner products pulled back to the faces of the in-plane fluxes
    cy_c = 0.5 * (C.y + _sh(C.y, 0, 1))
    cx_c = 0.5 * (C.x + _sh(C.x, 1, 1))
    fx = 0.5 * (cy_c * bz + _sh(cy_c * bz, 1, -1)) + face_avg_x(C.z) * dzx
    fy = -0.5 * (cx_c * bz + _sh(cx_c * bz, 0, -1)) + face_avg_y(C.z) * dzy
    div_M = div_faces(fx, fy, mesh)
    return DarwinBalance(dM, deps, div_E, div_M, div_M2, work)


def check_darwin_field_balance(phi_n, phi_np1, A_n, A_np1, dt, mesh, require_gauge=True,
                               gauge_tol=1e-12):
    """Relative error of ``dM/dt + deps/dt = div(G_E + G_M + G_M2) - E.j``.

    The balance needs ``div A = 0`` at both times; with ``require_gauge`` a
    violation raises :class:`ProjectionFailure` instead of being measured.
    """
    if require_gauge:
        for A in (A_n, A_np1):
            scale = max(1.0, float(np.max(np.abs(A.x))), float(np.max(np.abs(A.y))))
            if float(np.max(np.abs(divergence(A, mesh)))) > gauge_tol * scale / min(mesh.dx, mesh.dy):
                raise ProjectionFailure("vector potential is not divergence free")
    return darwin_balance(phi_n, phi_np1, A_n, A_np1, dt, mesh).relative_error()


def random_case(mesh, seed, project=True):
    """Synthetic ``(phi_n, phi_np1, A_n, A_np1, dt)`` for the identity checks."""
    rng = np.random.default_rng(seed)
    phi_n = rng.standard_normal(mesh.shape)
    phi_np1 = rng.standard_normal(mesh.shape)
    A_n = StaggeredVector2D.random(mesh, rng)
    A_np1 = StaggeredVector2D.random(mesh, rng)
    dt = float(rng.uniform(0.05, 0.5))
    if project:
        A_n = project_divergence_free(A_n, mesh)
        A_np1 = project_divergence_free(A_np1, mesh)
    return phi_n, phi_np1, A_n, A_np1, dt


def run_identity_suite(seeds=100, meshes=None, tol=1e-13, darwin_tol=1e-12):
    """Evaluate all kernels over ``seeds`` random cases on each mesh.

    Returns a dict of worst relative errors plus the smallest negative-control
    error (Darwin balance with the gauge projection skipped).
    """
    meshes = meshes or (Mesh2D(8, 8, 0.13, 0.21), Mesh2D(16, 12, 0.07, 0.11))
    worst = {"chain_rule_scalar": 0.0, "tensor_chain_rule": 0.0,
             "magnetic_telescoping": 0.0, "darwin_balance": 0.0}
    control = np.inf
    for mesh in meshes:
        for seed in range(seeds):
            phi_n, phi_np1, A_n, A_np1, dt = random_case(mesh, seed)
            worst["chain_rule_scalar"] = max(worst["chain_rule_scalar"],
                                             check_chain_rule_scalar(A_n, phi_n, mesh))
            worst["tensor_chain_rule"] = max(worst["tensor_chain_rule"],
                                             check_tensor_chain_rule(A_n, A_np1, dt, mesh))
            worst["magnetic_telescoping"] = max(
                worst["magnetic_telescoping"], check_magnetic_telescoping(A_n, A_np1, dt, mesh))
            worst["darwin_balance"] = max(
                worst["darwin_balance"],
                check_darwin_field_balance(phi_n, phi_np1, A_n, A_np1, dt, mesh))
            raw = random_case(mesh, seed, project=False)
            control = min(control, check_darwin_field_balance(*raw, mesh, require_gauge=False))
    passed = (all(v <= tol for k, v in worst.items() if k != "darwin_balance")
              and worst["darwin_balance"] <= darwin_tol and control >= 1e6 * darwin_tol)
    return {"worst": worst, "negative_control_min": control, "passed": passed}
