"""Compiled kernels: face gather, implicit sub-step push, deposition, ledger sums.

Mesh convention shared by every kernel: cell ``i`` is centred at
``(i + 1/2) dx`` and face index ``k`` sits at ``(k + 1) dx`` (the face
between cells ``k`` and ``k + 1``).  Positions may be handed in slightly
outside ``[0, L)``; indices are always reduced modulo ``n``.
"""
import math

import numpy as np
from numba import njit

OK = 0
ERR_SUBSTEP = 1
ERR_BUDGET = 2
ERR_CAPACITY = 3

# record float columns
R_TAU, R_XOLD, R_XNEW, R_XMID, R_DISP, R_EP = range(6)
N_RF = 6
# record vector slots
V_OLD, V_NEW, V_MID, V_DELTA = range(4)




@njit(cache=True)
def kadd(s, c, i, val):
    """Neumaier-compensated ``s[i] += val``; the running correction lives in ``c``."""
    t = s[i] + val
    if abs(s[i]) >= abs(val):
        c[i] += (s[i] - t) + val
    else:
        c[i] += (val - t) + s[i]
    s[i] = t


@njit(cache=True)
def gather_face(E, xp, n, dx):
    xi = xp / dx - 1.0
    k = math.floor(xi)
    f = xi - k
    k0 = int(k) % n
    k1 = (k0 + 1) % n
    return (1.0 - f) * E[k0] + f * E[k1]


@njit(cache=True)
def velocity_mid(vx, vy, vz, h, ep, bx, by, bz):
    """Solve ``u = v + h (ep x + u x B)`` in closed form."""
    ax = vx + h * ep
    tx = h * bx
    ty = h * by
    tz = h * bz
    t2 = tx * tx + ty * ty + tz * tz
    adt = ax * tx + vy * ty + vz * tz
    inv = 1.0 / (1.0 + t2)
    ux = (ax + (vy * tz - vz * ty) + adt * tx) * inv
    uy = (vy + (vz * tx - ax * tz) + adt * ty) * inv
    uz = (vz + (ax * ty - vy * tx) + adt * tz) * inv
    return ux, uy, uz


@njit(cache=True)
def lattice_point(j, dx, sub):
    # exact for sub in {1, 2}: the halving is a power-of-two scaling
    return (j * dx) / sub


@njit(cache=True)
def _locate(x0, dx, sub):
    j = int(math.floor(x0 * sub / dx))
    while lattice_point(j, dx, sub) > x0:
        j -= 1
    while lattice_point(j + 1, dx, sub) <= x0:
        j += 1
    return j, lattice_point(j, dx, sub) == x0


@njit(cache=True)
def _landing_residual(tau, d, vx, vy, vz, qm, ep, bx, by, bz):
    ux, _, _ = velocity_mid(vx, vy, vz, 0.5 * tau * qm, ep, bx, by, bz)
    return tau * ux - d


@njit(cache=True)
def _landing_time(tau_hi, d, vx, vy, vz, qm, ep, bx, by, bz, dt):
    """Root of ``tau * u_x(tau) = d`` on ``(0, tau_hi]`` with the midpoint field frozen.

    Returns a negative value when no sign change can be bracketed.
    """
    a = 0.0
    fa = -d
    b = tau_hi
    fb = _landing_residual(b, d, vx, vy, vz, qm, ep, bx, by, bz)
    if fb == 0.0:
        return b
    if (fa < 0.0) == (fb < 0.0):
        found = False
        for k in range(1, 257):
            tk = tau_hi * k / 256.0
            fk = _landing_residual(tk, d, vx, vy, vz, qm, ep, bx, by, bz)
            if fk == 0.0:
                return tk
            if (fa < 0.0) != (fk < 0.0):
                b = tk
                fb = fk
                found = True
                break
            a = tk
            fa = fk
        if not found:
            return -1.0
    ftol = 4.0 * 2.220446049250313e-16 * abs(d)
    side = 0
    best = b
    fbest = abs(fb)
    for _ in range(200):
        c = (a * fb - b * fa) / (fb - fa)
        if not (a < c < b):
            c = 0.5 * (a + b)
        fc = _landing_residual(c, d, vx, vy, vz, qm, ep, bx, by, bz)
        if abs(fc) < fbest:
            best = c
            fbest = abs(fc)
        if fc == 0.0 or abs(fc) <= ftol:
            break
        if (fc < 0.0) == (fb < 0.0):
            b = c
            fb = fc
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a = c
            fa = fc
            if side == 1:
                fb *= 0.5
            side = 1
        if b - a <= 1e-15 * dt:
            break
    return best


@njit(cache=True)
def substep(x0, vx, vy, vz, qmp, tau, last, E, n, dx, bx, by, bz, sub, tol, maxit, dt):
    """One implicit-midpoint sub-step of length at most ``tau`` from ``x0``.

    A free step that would leave the current lattice interval (spacing
    ``dx / sub``) is replaced by one that lands exactly on the interval edge.
    Returns ``(ok, tau, last, x1, x1_wrapped, ep, ux, uy, uz, dvx, dvy, dvz)``
    where ``x1`` is unwrapped so ``x1 - x0`` is the displacement.
    """
    length = n * dx
    h = 0.5 * tau * qmp
    xm = x0 + 0.5 * tau * vx
    conv = False
    ep = 0.0
    ux = vx
    uy = vy
    uz = vz
    # a tolerance below the spacing of doubles near x would cycle on one ulp
    xtol = max(tol * dx, 4.0 * 2.220446049250313e-16 * max(abs(x0), dx))
    for _ in range(maxit):
        ep = gather_face(E, xm, n, dx)
        ux, uy, uz = velocity_mid(vx, vy, vz, h, ep, bx, by, bz)
        xm_new = x0 + 0.5 * tau * ux
        if abs(xm_new - xm) <= xtol:
            ep = gather_face(E, xm_new, n, dx)
            ux, uy, uz = velocity_mid(vx, vy, vz, h, ep, bx, by, bz)
            conv = True
            break
        xm = xm_new
    if not conv:
        return False, tau, last, x0, x0, ep, ux, uy, uz, 0.0, 0.0, 0.0
    x1 = x0 + tau * ux
    j, on = _locate(x0, dx, sub)
    jlo = j - 1 if on else j
    jhi = j + 1
    jland = 0
    landed = False
    if x1 >= lattice_point(jhi, dx, sub):
        jland = jhi
        landed = True
    elif x1 <= lattice_point(jlo, dx, sub):
        jland = jlo
        landed = True
    if landed:
        target = lattice_point(jland, dx, sub)
        if x1 != target:
            xm = 0.5 * (x0 + target)
            ep = gather_face(E, xm, n, dx)
            t_land = _landing_time(tau, target - x0, vx, vy, vz, qmp, ep, bx, by, bz, dt)
            if t_land <= 0.0:
                return False, tau, last, x0, x0, ep, ux, uy, uz, 0.0, 0.0, 0.0
            last = last and t_land >= tau
            tau = t_land
            h = 0.5 * tau * qmp
            ux, uy, uz = velocity_mid(vx, vy, vz, h, ep, bx, by, bz)
        x1 = target
        x1w = lattice_point(jland % (n * sub), dx, sub)
    else:
        x1w = x1
        if x1w < 0.0:
            x1w += length
        if x1w >= length:
            x1w -= length
        if x1w < 0.0 or x1w >= length:
            x1w = 0.0
    # velocity increment from the force, not from differencing
    dvx = 2.0 * h * (ep + (uy * bz - uz * by))
    dvy = 2.0 * h * (uz * bx - ux * bz)
    dvz = 2.0 * h * (ux * by - uy * bx)
    return True, tau, last, x1, x1w, ep, ux, uy, uz, dvx, dvy, dvz


@njit(cache=True)
def push_all(x, v, qm, E, n, dx, dt, bx, by, bz, bscale, gyro_frac, sub, tol, maxit,
             max_sub, x_out, v_out, rec_i, rec_f, rec_v):
    """Orbit-average every particle across one step under the frozen field ``E``.

    Sub-steps are taken until the accumulated orbit time reaches ``dt``; the
    final one is truncated to land on the step end.  Records beyond the
    capacity of ``rec_i`` are counted but not stored.  Particle ``p`` sees
    the magnetic field scaled by ``bscale[p]``.  Returns
    ``(status, n_records, bad_particle)``.
    """
    npart = x.shape[0]
    cap = rec_i.shape[0]
    bmag = math.sqrt(bx * bx + by * by + bz * bz)
    count = 0
    for p in range(npart):
        x0 = x[p]
        vx = v[p, 0]
        vy = v[p, 1]
        vz = v[p, 2]
        qmp = qm[p]
        bs = bscale[p]
        bxp = bx * bs
        byp = by * bs
        bzp = bz * bs
        wc = abs(qmp * bs) * bmag
        tau_gyro = np.inf
        if gyro_frac > 0.0 and wc > 0.0:
            tau_gyro = gyro_frac * 2.0 * math.pi / wc
        elapsed = 0.0
        nsub = 0
        while dt - elapsed > 0.0:
            if nsub >= max_sub:
                return ERR_BUDGET, count, p
            remaining = dt - elapsed
            last = tau_gyro >= remaining
            cap_tau = remaining if last else tau_gyro
            ok, tau, last, x1, x1w, ep, ux, uy, uz, dvx, dvy, dvz = substep(
                x0, vx, vy, vz, qmp, cap_tau, last, E, n, dx, bxp, byp, bzp, sub, tol, maxit, dt)
            if not ok:
                return ERR_SUBSTEP, count, p
            if count < cap:
                rec_i[count] = p
                rec_f[count, R_TAU] = tau
                rec_f[count, R_XOLD] = x0
                rec_f[count, R_XNEW] = x1w
                rec_f[count, R_XMID] = 0.5 * (x0 + x1)
                rec_f[count, R_DISP] = x1 - x0
                rec_f[count, R_EP] = ep
                rec_v[count, V_OLD, 0] = vx
                rec_v[count, V_OLD, 1] = vy
                rec_v[count, V_OLD, 2] = vz
                rec_v[count, V_MID, 0] = ux
                rec_v[count, V_MID, 1] = uy
                rec_v[count, V_MID, 2] = uz
                rec_v[count, V_DELTA, 0] = dvx
                rec_v[count, V_DELTA, 1] = dvy
                rec_v[count, V_DELTA, 2] = dvz
            vx = vx + dvx
            vy = vy + dvy
            vz = vz + dvz
            if count < cap:
                rec_v[count, V_NEW, 0] = vx
                rec_v[count, V_NEW, 1] = vy
                rec_v[count, V_NEW, 2] = vz
            count += 1
            nsub += 1
            x0 = x1w
            if last:
                break
            elapsed += tau
        x_out[p] = x0
        v_out[p, 0] = vx
        v_out[p, 1] = vy
        v_out[p, 2] = vz
    if count > cap:
        return ERR_CAPACITY, count, -1
    return OK, count, -1


@njit(cache=True)
def stencil_nodes(xp, dx, l, off):
    """Base index and up to three weights of the order-``l`` spline at ``xp``.

    ``off`` is the node offset in cells: 0.5 for cell centres, 1.0 for faces.
    """
    xi = xp / dx - off
    w0 = 0.0
    w1 = 0.0
    w2 = 0.0
    if l == 0:
        base = math.floor(xi + 0.5)
        w0 = 1.0
    elif l == 1:
        base = math.floor(xi)
        f = xi - base
        w0 = 1.0 - f
        w1 = f
    else:
        c = math.floor(xi + 0.5)
        f = xi - c
        base = c - 1
        w0 = 0.5 * (0.5 - f) * (0.5 - f)
        w1 = 0.75 - f * f
        w2 = 0.5 * (0.5 + f) * (0.5 + f)
    return int(base), w0, w1, w2


@njit(cache=True)
def deposit(x, w, n, dx, l):
    """``(1/dx) sum_p w_p S_l(x_i - x_p)`` at cell centres, compensated."""
    s = np.zeros(n)
    c = np.zeros(n)
    inv = 1.0 / dx
    for p in range(x.shape[0]):
        base, w0, w1, w2 = stencil_nodes(x[p], dx, l, 0.5)
        wp = w[p] * inv
        kadd(s, c, base % n, wp * w0)
        if l >= 1:
            kadd(s, c, (base + 1) % n, wp * w1)
        if l == 2:
            kadd(s, c, (base + 2) % n, wp * w2)
    return s + c


@njit(cache=True)
def scatter_current(count, rec_i, rec_f, q, n, dx, dt):
    """Orbit-averaged face current from sub-step records."""
    s = np.zeros(n)
    c = np.zeros(n)
    scale = 1.0 / (dx * dt)
    for r in range(count):
        wq = q[rec_i[r]] * rec_f[r, R_DISP] * scale
        base, w0, w1, _ = stencil_nodes(rec_f[r, R_XMID], dx, 1, 1.0)
        kadd(s, c, base % n, wq * w0)
        kadd(s, c, (base + 1) % n, wq * w1)
    return s + c


@njit(cache=True)
def _s2(delta):
    a = abs(delta)
    if a < 0.5:
        return 0.75 - a * a
    if a < 1.5:
        return 0.5 * (1.5 - a) * (1.5 - a)
    return 0.0


@njit(cache=True)
def _s1(delta):
    a = abs(delta)
    if a < 1.0:
        return 1.0 - a
    return 0.0


@njit(cache=True)
def shape_increment(l, x0, step, dx, n, out_idx, out_val):
    """Cell-wise ``S_l(x_i - x0 - step) - S_l(x_i - x0)`` by direct evaluation."""
    xi0 = x0 / dx - 0.5
    dlt = step / dx
    c = math.floor(xi0 + 0.5 * dlt)
    k = 0
    for i in range(c - 3, c + 5):
        if l == 2:
            val = _s2(i - xi0 - dlt) - _s2(i - xi0)
        else:
            val = _s1(i - xi0 - dlt) - _s1(i - xi0)
        if val != 0.0:
            out_idx[k] = i % n
            out_val[k] = val
            k += 1
    return k


@njit(cache=True)
def ledger_sums(count, rec_i, rec_f, rec_v, q, m, E_half, n, dx, dt, l):
    """Per-sub-step kinetic-energy ledger accumulation.

    All spline weights of one record are evaluated from a single offset
    ``fm`` of the segment midpoint relative to its nearest node, with the
    endpoints at ``fm -+ disp / (2 dx)``.  Converting each position to mesh
    units separately would carry an absolute error of order ``eps * n`` into
    terms that cancel between particles.  When the endpoints do not share a
    polynomial piece the increment falls back to direct evaluation and the
    record is counted as straddling.

    Returns ``(dek, gamma_hi, gamma_lo, source, n_straddling, gross)``;
    gamma is an unevaluated compensated pair so its divergence keeps the
    digits that cancel between neighbouring faces, and ``gross`` is the sum
    of the absolute per-record source deposits, the scale of the source's
    rounding error.
    """
    dek = np.zeros(n)
    dek_c = np.zeros(n)
    gam = np.zeros(n)
    gam_c = np.zeros(n)
    src = np.zeros(n)
    src_c = np.zeros(n)
    idx = np.zeros(8, dtype=np.int64)
    val = np.zeros(8)
    scale = 1.0 / (dx * dt)
    eps = 2.220446049250313e-16
    straddle = 0
    gross = 0.0
    for r in range(count):
        p = rec_i[r]
        qq = q[p]
        mm = m[p]
        tau = rec_f[r, R_TAU]
        x0 = rec_f[r, R_XOLD]
        xm = rec_f[r, R_XMID]
        disp = rec_f[r, R_DISP]
        vox = rec_v[r, V_OLD, 0]
        voy = rec_v[r, V_OLD, 1]
        voz = rec_v[r, V_OLD, 2]
        ux = rec_v[r, V_MID, 0]
        uy = rec_v[r, V_MID, 1]
        uz = rec_v[r, V_MID, 2]
        k_old = 0.5 * mm * (vox * vox + voy * voy + voz * voz)
        d_k = mm * (rec_v[r, V_DELTA, 0] * ux + rec_v[r, V_DELTA, 1] * uy
                    + rec_v[r, V_DELTA, 2] * uz)
        e_kp = k_old + 0.5 * d_k
        a = d_k * scale
        b = k_old * scale
        g = disp * e_kp * scale
        ep = gather_face(E_half, xm, n, dx)
        s = qq * ep * disp * scale
        gross += abs(s)
        xim = xm / dx - 0.5
        dlt = disp / dx
        slack = 8.0 * eps * (abs(xim) + 1.0)
        if l == 2:
            c = math.floor(xim + 0.5)
            fm = xim - c
            f0 = fm - 0.5 * dlt
            f1 = fm + 0.5 * dlt
            im = (c - 1) % n
            i0 = c % n
            ip = (c + 1) % n
            if abs(f0) <= 0.5 + slack and abs(f1) <= 0.5 + slack:
                # dK S(x1) + K0 (S(x1) - S(x0)), increment factored exactly
                kadd(dek, dek_c, im, a * (0.5 * (0.5 - f1) * (0.5 - f1)) - b * (0.5 * dlt * (1.0 - 2.0 * fm)))
                kadd(dek, dek_c, i0, a * (0.75 - f1 * f1) - b * (2.0 * dlt * fm))
                kadd(dek, dek_c, ip, a * (0.5 * (0.5 + f1) * (0.5 + f1)) + b * (0.5 * dlt * (1.0 + 2.0 * fm)))
            else:
                straddle += 1
                base, w0, w1, w2 = stencil_nodes(x0 + disp, dx, 2, 0.5)
                kadd(dek, dek_c, base % n, a * w0)
                kadd(dek, dek_c, (base + 1) % n, a * w1)
                kadd(dek, dek_c, (base + 2) % n, a * w2)
                nk = shape_increment(2, x0, disp, dx, n, idx, val)
                for k in range(nk):
                    kadd(dek, dek_c, idx[k], b * val[k])
            # faces c-1/2 and c+1/2 carry S_1 weights 1/2 -+ fm
            kadd(gam, gam_c, im, g * (0.5 - fm))
            kadd(gam, gam_c, i0, g * (0.5 + fm))
            corr = tau * tau * ux * ux / (8.0 * dx * dx)
            kadd(src, src_c, im, s * (0.5 * (0.5 - fm) * (0.5 - fm) + corr))
            kadd(src, src_c, i0, s * (0.75 - fm * fm - 2.0 * corr))
            kadd(src, src_c, ip, s * (0.5 * (0.5 + fm) * (0.5 + fm) + corr))
        else:
            c = math.floor(xim)
            fm = xim - c
            f0 = fm - 0.5 * dlt
            f1 = fm + 0.5 * dlt
            i0 = c % n
            ip = (c + 1) % n
            if -slack <= f0 <= 1.0 + slack and -slack <= f1 <= 1.0 + slack:
                kadd(dek, dek_c, i0, a * (1.0 - f1) - b * dlt)
                kadd(dek, dek_c, ip, a * f1 + b * dlt)
            else:
                straddle += 1
                base, w0, w1, _ = stencil_nodes(x0 + disp, dx, 1, 0.5)
                kadd(dek, dek_c, base % n, a * w0)
                kadd(dek, dek_c, (base + 1) % n, a * w1)
                nk = shape_increment(1, x0, disp, dx, n, idx, val)
                for k in range(nk):
                    kadd(dek, dek_c, idx[k], b * val[k])
            # the single face between nodes c and c+1 owns the top-hat
            kadd(gam, gam_c, i0, g)
            kadd(src, src_c, i0, s * (1.0 - fm))
            kadd(src, src_c, ip, s * fm)
    return dek + dek_c, gam, gam_c, src + src_c, straddle, gross
