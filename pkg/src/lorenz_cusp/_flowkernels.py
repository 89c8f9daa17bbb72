"""Compiled kernels for the shifted Lorenz field.

The parameter vector ``prm`` packs ``(sigma, rho, beta, g1, g2, g3, variant)``
where ``g`` is the additive forcing perturbation and ``variant`` is 0 for the
full dissipative field and 1 for the conservative (Hamiltonian) part only.
"""

import numpy as np
import numba as nb

# status codes shared with flow.py
OK = 0
STIFF = 1
DIVERGED = 2
MAX_STEPS = 3

# Dormand-Prince 5(4) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                          22 / 525, -1 / 40)

H_MIN = 1e-14
# keeps steps inside the DP5 stability region near equilibria, where the
# error estimate alone would let h grow until roundoff is amplified
H_MAX = 0.05
SAFETY = 0.9


@nb.njit(cache=True, nogil=True)
def field(u, prm, out):
    s, r, b = prm[0], prm[1], prm[2]
    if prm[6] == 1.0:
        # v = (Omega u + h) x u
        out[0] = s * u[1]
        out[1] = -s * u[0] - u[0] * u[2]
        out[2] = u[0] * u[1]
        return
    out[0] = -s * u[0] + s * u[1] + prm[3]
    out[1] = -u[0] * u[2] - s * u[0] - u[1] + prm[4]
    out[2] = u[0] * u[1] - b * u[2] - b * (r + s) + prm[5]


@nb.njit(cache=True, nogil=True)
def cdot_along(u, f):
    return 2.0 * (u[0] * f[0] + u[1] * f[1] + u[2] * f[2])


@nb.njit(cache=True, nogil=True)
def cddot_along(u, f, prm):
    """Second time derivative of |u|^2 along the field: 2(|f|^2 + u.Jf)."""
    s, b = prm[0], prm[2]
    if prm[6] == 1.0:
        j0 = s * f[1]
        j1 = (-s - u[2]) * f[0] - u[0] * f[2]
        j2 = u[1] * f[0] + u[0] * f[1]
    else:
        j0 = -s * f[0] + s * f[1]
        j1 = (-u[2] - s) * f[0] - f[1] - u[0] * f[2]
        j2 = u[1] * f[0] + u[0] * f[1] - b * f[2]
    ff = f[0] * f[0] + f[1] * f[1] + f[2] * f[2]
    return 2.0 * (ff + u[0] * j0 + u[1] * j1 + u[2] * j2)


@nb.njit(cache=True, nogil=True)
def hermite(u0, f0, u1, f1, h, th, out):
    th2 = th * th
    th3 = th2 * th
    h00 = 2 * th3 - 3 * th2 + 1
    h10 = th3 - 2 * th2 + th
    h01 = -2 * th3 + 3 * th2
    h11 = th3 - th2
    for i in range(3):
        out[i] = h00 * u0[i] + h10 * h * f0[i] + h01 * u1[i] + h11 * h * f1[i]


@nb.njit(cache=True, nogil=True)
def _dp_step(u, k1, h, prm, k2, k3, k4, k5, k6, k7, y, un):
    """One trial DP5 step; returns the scaled error norm (tol applied later)."""
    for i in range(3):
        y[i] = u[i] + h * A21 * k1[i]
    field(y, prm, k2)
    for i in range(3):
        y[i] = u[i] + h * (A31 * k1[i] + A32 * k2[i])
    field(y, prm, k3)
    for i in range(3):
        y[i] = u[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    field(y, prm, k4)
    for i in range(3):
        y[i] = u[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    field(y, prm, k5)
    for i in range(3):
        y[i] = u[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i]
                           + A64 * k4[i] + A65 * k5[i])
    field(y, prm, k6)
    for i in range(3):
        un[i] = u[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i]
                            + B5 * k5[i] + B6 * k6[i])
    field(un, prm, k7)


@nb.njit(cache=True, nogil=True)
def _err_norm(u, un, h, k1, k3, k4, k5, k6, k7, tol):
    acc = 0.0
    for i in range(3):
        e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i]
                 + E6 * k6[i] + E7 * k7[i])
        sc = tol * (1.0 + max(abs(u[i]), abs(un[i])))
        acc += (e / sc) ** 2
    return np.sqrt(acc / 3.0)


@nb.njit(cache=True, nogil=True)
def _finite3(v):
    return np.isfinite(v[0]) and np.isfinite(v[1]) and np.isfinite(v[2])


@nb.njit(cache=True, nogil=True)
def integrate_dense(u0, t_end, tol, prm, max_steps):
    """Adaptive DP5 run storing every accepted node for Hermite dense output.

    Returns (times, states, derivs, n_steps, n_rejected, status).
    """
    cap = 1024
    ts = np.empty(cap)
    us = np.empty((cap, 3))
    fs = np.empty((cap, 3))
    u = u0.copy()
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    k5 = np.empty(3)
    k6 = np.empty(3)
    k7 = np.empty(3)
    y = np.empty(3)
    un = np.empty(3)
    field(u, prm, k1)
    t = 0.0
    ts[0] = t
    us[0] = u
    fs[0] = k1
    n = 1
    h = min(1e-3, t_end)
    rejected = 0
    status = OK
    while t < t_end:
        if n - 1 >= max_steps:
            status = MAX_STEPS
            break
        if t + h > t_end:
            h = t_end - t
        _dp_step(u, k1, h, prm, k2, k3, k4, k5, k6, k7, y, un)
        err = _err_norm(u, un, h, k1, k3, k4, k5, k6, k7, tol)
        if not np.isfinite(err):
            if not _finite3(un) and h <= H_MIN:
                status = DIVERGED
                break
            h *= 0.2
            rejected += 1
            if h < H_MIN:
                status = STIFF
                break
            continue
        if err <= 1.0:
            t = t + h
            for i in range(3):
                u[i] = un[i]
                k1[i] = k7[i]
            if not _finite3(u) or abs(u[0]) + abs(u[1]) + abs(u[2]) > 1e12:
                status = DIVERGED
                break
            if n == cap:
                cap *= 2
                ts2 = np.empty(cap)
                us2 = np.empty((cap, 3))
                fs2 = np.empty((cap, 3))
                ts2[:n] = ts[:n]
                us2[:n] = us[:n]
                fs2[:n] = fs[:n]
                ts, us, fs = ts2, us2, fs2
            ts[n] = t
            us[n] = u
            fs[n] = k1
            n += 1
            fac = 5.0 if err == 0.0 else min(5.0, SAFETY * err ** -0.2)
            h = min(h * max(0.2, fac), H_MAX)
        else:
            rejected += 1
            h *= max(0.2, SAFETY * err ** -0.2)
            if h < H_MIN:
                status = STIFF
                break
    return ts[:n], us[:n], fs[:n], n - 1, rejected, status


@nb.njit(cache=True, nogil=True)
def _refine_max(ua, fa, ub, fb, h, prm, refine_tol, time_tol, y, fy):
    """Bisection for the + to - sign change of dC/dt on one Hermite step.

    Returns (theta, ok); ``y`` and ``fy`` hold the event state and field.
    """
    lo = 0.0
    hi = 1.0
    th = 0.5
    ok = False
    for _ in range(200):
        th = 0.5 * (lo + hi)
        hermite(ua, fa, ub, fb, h, th, y)
        field(y, prm, fy)
        cd = cdot_along(y, fy)
        if abs(cd) < refine_tol and (hi - lo) * h < time_tol:
            ok = True
            break
        if cd > 0.0:
            lo = th
        else:
            hi = th
        if hi - lo < 1e-17:
            ok = abs(cd) < refine_tol
            break
    return th, ok


@nb.njit(cache=True, nogil=True)
def maxima_from_nodes(ts, us, fs, prm, t_discard, refine_tol, time_tol, merge_dt):
    """Casimir maxima located on stored dense-output nodes."""
    n = ts.shape[0]
    ev_t = np.empty(n)
    ev_u = np.empty((n, 3))
    ne = 0
    y = np.empty(3)
    fy = np.empty(3)
    cd_a = cdot_along(us[0], fs[0])
    for k in range(n - 1):
        cd_b = cdot_along(us[k + 1], fs[k + 1])
        if cd_a > 0.0 and cd_b <= 0.0 and ts[k + 1] > t_discard:
            h = ts[k + 1] - ts[k]
            th, ok = _refine_max(us[k], fs[k], us[k + 1], fs[k + 1], h, prm,
                                 refine_tol, time_tol, y, fy)
            te = ts[k] + th * h
            if ok and te > t_discard and cddot_along(y, fy, prm) < 0.0 and y[0] != 0.0:
                if ne > 0 and te - ev_t[ne - 1] < merge_dt:
                    # grazing double detection: keep the larger maximum
                    c_old = ev_u[ne - 1, 0] ** 2 + ev_u[ne - 1, 1] ** 2 + ev_u[ne - 1, 2] ** 2
                    if y[0] ** 2 + y[1] ** 2 + y[2] ** 2 > c_old:
                        ev_t[ne - 1] = te
                        ev_u[ne - 1] = y
                else:
                    ev_t[ne] = te
                    ev_u[ne] = y
                    ne += 1
        cd_a = cd_b
    return ev_t[:ne], ev_u[:ne]


@nb.njit(cache=True, nogil=True)
def scan_maxima(u0, t_end, tol, prm, t_discard, refine_tol, time_tol, merge_dt,
                max_events):
    """Integrate and detect Casimir maxima in one pass without storing the orbit.

    Returns (event_times, event_states, n_steps, n_rejected, status, t_reached).
    """
    cap = 1024
    ev_t = np.empty(cap)
    ev_u = np.empty((cap, 3))
    ne = 0
    u = u0.copy()
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    k5 = np.empty(3)
    k6 = np.empty(3)
    k7 = np.empty(3)
    y = np.empty(3)
    un = np.empty(3)
    ye = np.empty(3)
    fe = np.empty(3)
    field(u, prm, k1)
    t = 0.0
    h = min(1e-3, t_end)
    steps = 0
    rejected = 0
    status = OK
    cd_a = cdot_along(u, k1)
    while t < t_end and ne < max_events:
        if t + h > t_end:
            h = t_end - t
        _dp_step(u, k1, h, prm, k2, k3, k4, k5, k6, k7, y, un)
        err = _err_norm(u, un, h, k1, k3, k4, k5, k6, k7, tol)
        if not np.isfinite(err):
            h *= 0.2
            rejected += 1
            if h < H_MIN:
                status = DIVERGED if not _finite3(un) else STIFF
                break
            continue
        if err <= 1.0:
            steps += 1
            cd_b = cdot_along(un, k7)
            if cd_a > 0.0 and cd_b <= 0.0 and t + h > t_discard:
                th, ok = _refine_max(u, k1, un, k7, h, prm, refine_tol, time_tol, ye, fe)
                te = t + th * h
                if ok and te > t_discard and cddot_along(ye, fe, prm) < 0.0 and ye[0] != 0.0:
                    if ne > 0 and te - ev_t[ne - 1] < merge_dt:
                        c_old = ev_u[ne - 1, 0] ** 2 + ev_u[ne - 1, 1] ** 2 + ev_u[ne - 1, 2] ** 2
                        if ye[0] ** 2 + ye[1] ** 2 + ye[2] ** 2 > c_old:
                            ev_t[ne - 1] = te
                            ev_u[ne - 1] = ye
                    else:
                        if ne == cap:
                            cap *= 2
                            t2 = np.empty(cap)
                            u2 = np.empty((cap, 3))
                            t2[:ne] = ev_t[:ne]
                            u2[:ne] = ev_u[:ne]
                            ev_t, ev_u = t2, u2
                        ev_t[ne] = te
                        ev_u[ne] = ye
                        ne += 1
            cd_a = cd_b
            t = t + h
            for i in range(3):
                u[i] = un[i]
                k1[i] = k7[i]
            if not _finite3(u) or abs(u[0]) + abs(u[1]) + abs(u[2]) > 1e12:
                status = DIVERGED
                break
            fac = 5.0 if err == 0.0 else min(5.0, SAFETY * err ** -0.2)
            h = min(h * max(0.2, fac), H_MAX)
        else:
            rejected += 1
            h *= max(0.2, SAFETY * err ** -0.2)
            if h < H_MIN:
                status = STIFF
                break
    return ev_t[:ne], ev_u[:ne], steps, rejected, status, t


@nb.njit(cache=True, nogil=True)
def interpolate_nodes(ts, us, fs, tq, out):
    m = tq.shape[0]
    n = ts.shape[0]
    for j in range(m):
        k = np.searchsorted(ts, tq[j], side="right") - 1
        if k < 0:
            k = 0
        if k > n - 2:
            k = n - 2
        h = ts[k + 1] - ts[k]
        th = (tq[j] - ts[k]) / h
        hermite(us[k], fs[k], us[k + 1], fs[k + 1], h, th, out[j])


@nb.njit(cache=True, nogil=True)
def fixed_step_rk4_maxima(u0, t_end, dt, prm, t_discard):
    """Brute-force oracle: classic RK4 at fixed dt, maxima by parabolic fit."""
    n = int(t_end / dt)
    u = u0.copy()
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    y = np.empty(3)
    out = np.empty(n // 10 + 16)
    ne = 0
    c_prev2 = 0.0
    c_prev = 0.0
    for step in range(n):
        field(u, prm, k1)
        for i in range(3):
            y[i] = u[i] + 0.5 * dt * k1[i]
        field(y, prm, k2)
        for i in range(3):
            y[i] = u[i] + 0.5 * dt * k2[i]
        field(y, prm, k3)
        for i in range(3):
            y[i] = u[i] + dt * k3[i]
        field(y, prm, k4)
        for i in range(3):
            u[i] += dt * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) / 6.0
        c = u[0] * u[0] + u[1] * u[1] + u[2] * u[2]
        if step >= 2 and c_prev > c_prev2 and c_prev >= c:
            tm = step * dt
            denom = c_prev2 - 2 * c_prev + c
            shift = 0.0 if denom == 0.0 else 0.5 * (c_prev2 - c) / denom
            te = tm + shift * dt
            if te > t_discard and ne < out.shape[0]:
                out[ne] = te
                ne += 1
        c_prev2 = c_prev
        c_prev = c
    return out[:ne]
