"""Compiled evaluation, derivative and inverse branches of interval maps.

A map is passed to every kernel as the tuple ``(kind, prm, bpl, cl, bpr, cr)``:

* kind 0, analytic cusp family; ``prm`` = (x0, alpha', beta', psi, alpha,
  beta~, kappa, A', B', A, B, m)
* kind 1, empirical cusp map; ``prm`` = (x0, eL, eR).  Branch values are
  piecewise cubics (``bp``/``c`` in scipy PPoly layout) in the warped
  coordinate ``u = d**e`` where ``d`` is the distance to the cusp.
* kind 2, doubling fixture ``x -> 2x mod 1``; ``prm`` = (0.5,).  The state is
  a 53-bit fixed-point word; the bit shifted in at the bottom is a hash of
  the word, so float orbits follow the exact doubling orbit of a typical
  real point instead of collapsing onto 0 after 53 steps.

Branch functions receive both ``x`` and the distance ``d = |x - x0|`` so the
caller can keep full relative precision on whichever is small.
"""

import math

import numpy as np
import numba as nb

ANALYTIC = 0
EMPIRICAL = 1
DOUBLING = 2

LEFT = 0
RIGHT = 1


_SCALE = 9007199254740992.0  # 2**53
_MASK = (1 << 53) - 1


@nb.njit(cache=True, nogil=True)
def _hash_bit(k):
    # splitmix64 finalizer, top bit
    z = np.uint64(k) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return np.int64(z >> np.uint64(63))


@nb.njit(cache=True, nogil=True)
def _doubling(x):
    k = np.int64(x * _SCALE)
    k2 = ((k << 1) & _MASK) | _hash_bit(k)
    return k2 / _SCALE


@nb.njit(cache=True, nogil=True)
def _blend(t, s, m):
    """w = t^m / (t^m + s^m) with s = 1 - t, and dw/dt."""
    tm = t ** m
    sm = s ** m
    den = tm + sm
    w = tm / den
    dw = m * t ** (m - 1.0) * s ** (m - 1.0) / (den * den)
    return w, dw


@nb.njit(cache=True, nogil=True)
def _pp_eval(bp, c, u, nu):
    """Value (nu=0) or first derivative (nu=1) of a cubic PPoly."""
    n = bp.shape[0] - 1
    i = np.searchsorted(bp, u, side="right") - 1
    if i < 0:
        i = 0
    if i > n - 1:
        i = n - 1
    du = u - bp[i]
    if nu == 0:
        return ((c[0, i] * du + c[1, i]) * du + c[2, i]) * du + c[3, i]
    return (3.0 * c[0, i] * du + 2.0 * c[1, i]) * du + c[2, i]


@nb.njit(cache=True, nogil=True)
def branch_val(M, br, x, d):
    kind = M[0]
    p = M[1]
    x0 = p[0]
    if kind == DOUBLING:
        return _doubling(x)
    if kind == EMPIRICAL:
        if br == LEFT:
            return _pp_eval(M[2], M[3], d ** p[1], 0)
        return _pp_eval(M[4], M[5], d ** p[2], 0)
    m = p[11]
    if br == LEFT:
        t = x / x0
        s = d / x0
        p0 = p[1] * x + p[2] * x ** (1.0 + p[3])
        p1 = 1.0 - p[7] * d ** p[8]
        tm = t ** m
        sm = s ** m
        if tm <= sm:
            return p0 + tm / (tm + sm) * (p1 - p0)
        return p1 + sm / (tm + sm) * (p0 - p1)
    e = 1.0 - x
    span = 1.0 - x0
    t = d / span
    s = e / span
    q0 = 1.0 - p[9] * d ** p[10]
    q1 = p[4] * e + p[5] * e ** (1.0 + p[6])
    tm = t ** m
    sm = s ** m
    if tm <= sm:
        return q0 + tm / (tm + sm) * (q1 - q0)
    return q1 + sm / (tm + sm) * (q0 - q1)


@nb.njit(cache=True, nogil=True)
def branch_der(M, br, x, d):
    """dT/dx on branch ``br``; signed infinity at the cusp."""
    kind = M[0]
    p = M[1]
    x0 = p[0]
    if kind == DOUBLING:
        return 2.0
    if d <= 0.0:
        return math.inf if br == LEFT else -math.inf
    if kind == EMPIRICAL:
        if br == LEFT:
            e = p[1]
            return -_pp_eval(M[2], M[3], d ** e, 1) * e * d ** (e - 1.0)
        e = p[2]
        return _pp_eval(M[4], M[5], d ** e, 1) * e * d ** (e - 1.0)
    m = p[11]
    if br == LEFT:
        t = x / x0
        s = d / x0
        p0 = p[1] * x + p[2] * x ** (1.0 + p[3])
        p1 = 1.0 - p[7] * d ** p[8]
        dp0 = p[1] + p[2] * (1.0 + p[3]) * x ** p[3]
        dp1 = p[7] * p[8] * d ** (p[8] - 1.0)
        w, dw = _blend(t, s, m)
        return dp0 + w * (dp1 - dp0) + dw / x0 * (p1 - p0)
    e = 1.0 - x
    span = 1.0 - x0
    t = d / span
    s = e / span
    q0 = 1.0 - p[9] * d ** p[10]
    q1 = p[4] * e + p[5] * e ** (1.0 + p[6])
    dq0 = -p[9] * p[10] * d ** (p[10] - 1.0)
    dq1 = -p[4] - p[5] * (1.0 + p[6]) * e ** p[6]
    w, dw = _blend(t, s, m)
    return dq0 + w * (dq1 - dq0) + dw / span * (q1 - q0)


@nb.njit(cache=True, nogil=True)
def t_eval(M, x):
    x0 = M[1][0]
    if M[0] == DOUBLING:
        return branch_val(M, LEFT, x, 0.0)
    if x <= x0:
        return branch_val(M, LEFT, x, x0 - x)
    return branch_val(M, RIGHT, x, x - x0)


@nb.njit(cache=True, nogil=True)
def t_deriv(M, x):
    x0 = M[1][0]
    if M[0] == DOUBLING:
        return 2.0
    if x <= x0:
        return branch_der(M, LEFT, x, x0 - x)
    return branch_der(M, RIGHT, x, x - x0)


@nb.njit(cache=True, nogil=True)
def _solve(M, br, y, tol, in_d):
    """Safeguarded Newton/bisection for T_br(v) = y.

    With ``in_d`` the unknown is the distance to the cusp (branch value
    decreasing in it); otherwise the unknown is x itself.
    Returns (x, d).
    """
    x0 = M[1][0]
    right_end = 1.0 - x0
    if in_d:
        lo = 0.0
        hi = x0 if br == LEFT else right_end
    else:
        lo = 0.0 if br == LEFT else x0
        hi = x0 if br == LEFT else 1.0
    v = 0.5 * (lo + hi)
    for _ in range(300):
        if in_d:
            d = v
            x = x0 - d if br == LEFT else x0 + d
        else:
            x = v
            d = x0 - x if br == LEFT else x - x0
        g = branch_val(M, br, x, d) - y
        if abs(g) < tol and (hi - lo) < 1e-12 * max(1.0, abs(v)) or hi - lo <= 0.0:
            return x, d
        # g as a function of v: left-x increasing, right-x decreasing, d decreasing
        increasing = (not in_d) and br == LEFT
        if (g < 0.0) == increasing:
            lo = v
        else:
            hi = v
        dx = branch_der(M, br, x, d)
        if in_d and br == LEFT:
            dx = -dx
        v_new = v - g / dx if dx != 0.0 and math.isfinite(dx) else 0.5 * (lo + hi)
        if not (lo < v_new < hi):
            v_new = 0.5 * (lo + hi)
        if v_new == v:
            return x, d
        v = v_new
    if in_d:
        return (x0 - v if br == LEFT else x0 + v), v
    return v, (x0 - v if br == LEFT else v - x0)


@nb.njit(cache=True, nogil=True)
def invert(M, br, y, tol):
    """Preimage of ``y`` under branch ``br``; returns (x, d)."""
    x0 = M[1][0]
    if M[0] == DOUBLING:
        x = 0.5 * y if br == LEFT else 0.5 * (y + 1.0)
        return x, abs(x - x0)
    if y >= 1.0:
        return x0, 0.0
    if y <= 0.0:
        return (0.0, x0) if br == LEFT else (1.0, 1.0 - x0)
    return _solve(M, br, y, tol, y > 0.5)


@nb.njit(cache=True, nogil=True)
def eval_array(M, xs, out):
    for i in range(xs.shape[0]):
        out[i] = t_eval(M, xs[i])


@nb.njit(cache=True, nogil=True)
def deriv_array(M, xs, out):
    for i in range(xs.shape[0]):
        out[i] = t_deriv(M, xs[i])


@nb.njit(cache=True, nogil=True)
def invert_array(M, br, ys, tol, out):
    for i in range(ys.shape[0]):
        out[i] = invert(M, br, ys[i], tol)[0]


@nb.njit(cache=True, nogil=True)
def orbit(M, x, n, out):
    for i in range(n):
        out[i] = x
        x = t_eval(M, x)
    return x
