"""One-dimensional cusp maps: analytic family, empirical fit, preimage lattice.

A cusp map T on [0, 1] has an increasing left branch T1 on [0, x0] and a
decreasing right branch T2 on [x0, 1], both onto [0, 1], with

    T(x)   ~ a' x + b' x**(1+psi)           x -> 0+
    T(x)   ~ a (1-x) + b~ (1-x)**(1+kappa)  x -> 1-
    1-T(x) ~ A' (x0-x)**B'                  x -> x0-
    1-T(x) ~ A (x-x0)**B                    x -> x0+
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator
from scipy.optimize import isotonic_regression, minimize_scalar

from . import _mapkernels as _mk
from .errors import (DepthError, DomainError, FitError, InvalidInputError,
                     InvalidParameterError, LatticeError, PreconditionError)

log = logging.getLogger(__name__)

LEFT, RIGHT = _mk.LEFT, _mk.RIGHT
BRANCHES = {"left": LEFT, "right": RIGHT, LEFT: LEFT, RIGHT: RIGHT}

MIN_PAIRS = 10_000
MIN_KNOTS = 32
# boundary slope windows: this fraction of branch samples nearest the end point
BOUNDARY_QUANTILE = 0.01
# candidate log-log windows for the cusp power laws lie inside this band
CUSP_BAND = (1e-6, 0.1)
# distances used when refining the cusp location
REFINE_BAND = (1e-4, 3e-2)


@dataclass(frozen=True)
class LocalExponents:
    """Coefficients of the four local germs of a cusp map."""

    alpha_prime: float
    psi: float
    beta_prime: float
    alpha: float
    kappa: float
    beta_tilde: float
    A_prime: float
    B_prime: float
    A: float
    B: float

    @property
    def B_star(self) -> float:
        return max(self.B, self.B_prime)

    def problems(self) -> list[str]:
        """Range violations, empty when every germ is admissible."""
        out = []
        checks = [
            ("alpha_prime > 1", self.alpha_prime > 1),
            ("psi > 1", self.psi > 1),
            ("beta_prime > 0", self.beta_prime > 0),
            ("0 < alpha < 1", 0 < self.alpha < 1),
            ("kappa > 1", self.kappa > 1),
            ("beta_tilde > 0", self.beta_tilde > 0),
            ("A_prime > 0", self.A_prime > 0),
            ("0 < B_prime < 1", 0 < self.B_prime < 1),
            ("A > 0", self.A > 0),
            ("0 < B < 1", 0 < self.B < 1),
        ]
        for name, ok in checks:
            if not ok:
                out.append(name)
        return out

    def validate(self) -> "LocalExponents":
        bad = self.problems()
        if bad:
            raise InvalidParameterError("exponent ranges violated: " + ", ".join(bad))
        return self

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LocalExponents":
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})


# Constants fitted on ~1e5 Lorenz maxima (boundary slopes and cusp exponents);
# the remaining shape coefficients are chosen so the analytic family built
# from them is monotone and satisfies the induced-expansion checks.
PUBLISHED_EXPONENTS = LocalExponents(alpha_prime=1.113, psi=2.0, beta_prime=1.0,
                                 alpha=0.4603, kappa=2.0, beta_tilde=0.25,
                                 A_prime=1.25, B_prime=0.3095, A=1.1, B=0.2856)
PUBLISHED_X0 = 0.375
DEFAULT_BLEND = 6.0


def _as_points(x):
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("x must lie in [0, 1]")
    return arr


class IntervalMap:
    """Common evaluation interface over a compiled kernel tuple."""

    x0: float

    @property
    def kernel(self):
        raise NotImplementedError

    def eval(self, x):
        arr = _as_points(x)
        flat = np.ascontiguousarray(arr.ravel())
        out = np.empty_like(flat)
        _mk.eval_array(self.kernel, flat, out)
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)

    __call__ = eval

    def deriv(self, x):
        """dT/dx; signed infinity at the cusp (+inf from the left branch)."""
        arr = _as_points(x)
        flat = np.ascontiguousarray(arr.ravel())
        out = np.empty_like(flat)
        _mk.deriv_array(self.kernel, flat, out)
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)

    def eval_at_distance(self, branch, d: float) -> float:
        """Branch value at distance ``d`` from the cusp, precise for tiny ``d``."""
        br = BRANCHES[branch]
        x = self.x0 - d if br == LEFT else self.x0 + d
        return float(_mk.branch_val(self.kernel, br, x, d))

    def deriv_at_distance(self, branch, d: float) -> float:
        br = BRANCHES[branch]
        x = self.x0 - d if br == LEFT else self.x0 + d
        return float(_mk.branch_der(self.kernel, br, x, d))

    def invert_branch(self, branch, y, tol: float = 1e-13):
        """Preimage of ``y`` under one branch (bisection with Newton polish)."""
        br = BRANCHES[branch]
        arr = _as_points(y)
        flat = np.ascontiguousarray(arr.ravel())
        out = np.empty_like(flat)
        _mk.invert_array(self.kernel, br, flat, float(tol), out)
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)

    def invert_with_distance(self, branch, y: float, tol: float = 1e-13):
        """Like :meth:`invert_branch` but also returns the distance to the cusp."""
        if not 0.0 <= y <= 1.0:
            raise DomainError("y must lie in [0, 1]")
        x, d = _mk.invert(self.kernel, BRANCHES[branch], float(y), float(tol))
        return float(x), float(d)

    def orbit(self, x: float, n: int) -> np.ndarray:
        out = np.empty(int(n))
        _mk.orbit(self.kernel, float(x), int(n), out)
        return out


class DoublingMap(IntervalMap):
    """x -> 2x (mod 1), a Lebesgue-preserving test fixture.

    Plain float doubling discards one mantissa bit per step and reaches 0
    within 53 steps.  Here x is a 53-bit word and the bit entering at the
    bottom is a hash of the word, which reproduces the doubling orbit of a
    typical real point.  The perturbation is below 2^-53.
    """

    def __init__(self):
        self.x0 = 0.5
        z = np.zeros(2)
        self._kernel = (_mk.DOUBLING, np.array([0.5]), z, np.zeros((4, 1)),
                        z, np.zeros((4, 1)))

    @property
    def kernel(self):
        return self._kernel


@dataclass
class CuspMap(IntervalMap):
    """Two-branch cusp map, either a closed-form family or fitted from data.

    For ``kind='analytic'`` the left branch blends the germ at 0 into the
    cusp germ with weight w(t) = t^m / (t^m + (1-t)^m), t = x/x0, and the
    right branch likewise with t = (x-x0)/(1-x0).  The blend weights vanish
    to order m at both ends, so all four germs hold exactly to leading order.

    For ``kind='empirical'`` each branch is a monotone piecewise cubic in the
    warped coordinate u = d**e (d = distance to the cusp, e = B' or B).  The
    fitted cusp power law makes the branch smooth in u, so the derivative
    blow-up at x0 is inherited from du/dx rather than from the interpolant.
    """

    kind: str
    x0: float
    exponents: LocalExponents
    blend: float = DEFAULT_BLEND
    knots: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.x0 < 1.0:
            raise InvalidParameterError(f"x0 must lie in (0, 1), got {self.x0}")
        e = self.exponents
        if self.kind == "analytic":
            prm = np.array([self.x0, e.alpha_prime, e.beta_prime, e.psi, e.alpha,
                            e.beta_tilde, e.kappa, e.A_prime, e.B_prime, e.A, e.B,
                            float(self.blend)])
            z = np.zeros(2)
            self._kernel = (_mk.ANALYTIC, prm, z, np.zeros((4, 1)), z, np.zeros((4, 1)))
        elif self.kind == "empirical":
            k = self.knots
            pl = _monotone_spline(k["u_left"], k["y_left"], k.get("end_slope_left"))
            pr = _monotone_spline(k["u_right"], k["y_right"], k.get("end_slope_right"))
            prm = np.array([self.x0, e.B_prime, e.B])
            self._kernel = (_mk.EMPIRICAL, prm, np.ascontiguousarray(pl.x),
                            np.ascontiguousarray(pl.c), np.ascontiguousarray(pr.x),
                            np.ascontiguousarray(pr.c))
        else:
            raise InvalidParameterError(f"unknown map kind {self.kind!r}")

    @property
    def kernel(self):
        return self._kernel

    def check_invariants(self, n: int = 10_000) -> None:
        """Boundary values and strict monotonicity of both branches on a grid."""
        ends = [self.eval(0.0), self.eval(self.x0), self.eval(1.0)]
        if abs(ends[0]) > 1e-12 or abs(ends[1] - 1.0) > 1e-12 or abs(ends[2]) > 1e-12:
            raise InvalidParameterError(f"branches not onto [0,1]: T(0),T(x0),T(1) = {ends}")
        left = self.eval(np.linspace(0.0, self.x0, n))
        right = self.eval(np.linspace(self.x0, 1.0, n))
        if np.any(np.diff(left) <= 0):
            raise InvalidParameterError("left branch is not strictly increasing")
        if np.any(np.diff(right) >= 0):
            raise InvalidParameterError("right branch is not strictly decreasing")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "x0": self.x0, "exponents": self.exponents.as_dict(),
                "blend": self.blend, "knots": self.knots, "diagnostics": self.diagnostics}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)

    @classmethod
    def from_dict(cls, d: dict) -> "CuspMap":
        return cls(d["kind"], float(d["x0"]), LocalExponents.from_dict(d["exponents"]),
                   float(d.get("blend", DEFAULT_BLEND)), d.get("knots"),
                   d.get("diagnostics", {}))

    @classmethod
    def from_json(cls, path) -> "CuspMap":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _monotone_spline(u, y, end_slope=None):
    """PCHIP through decreasing knots, optionally with a prescribed slope at the
    last knot (clipped to the Fritsch-Carlson monotonicity region)."""
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if end_slope is None:
        return PchipInterpolator(u, y)
    m = PchipInterpolator(u, y).derivative()(u)
    delta = (y[-1] - y[-2]) / (u[-1] - u[-2])
    a = m[-2] / delta
    b = min(max(end_slope / delta, 0.0), math.sqrt(max(9.0 - a * a, 0.0)))
    m[-1] = b * delta
    return CubicHermiteSpline(u, y, m)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o)}")


def build_analytic(exponents: LocalExponents = PUBLISHED_EXPONENTS, x0: float = PUBLISHED_X0,
                   blend: float = DEFAULT_BLEND) -> CuspMap:
    """Closed-form cusp map with prescribed germs at 0, x0 and 1."""
    exponents.validate()
    if not 0.0 < x0 < 1.0:
        raise InvalidParameterError(f"x0 must lie in (0, 1), got {x0}")
    if blend < 2:
        raise InvalidParameterError("blend order must be >= 2")
    e = exponents
    if e.A_prime * x0 ** e.B_prime > 1.0 or e.A * (1 - x0) ** e.B > 1.0:
        raise InvalidParameterError("cusp germ drops below 0 inside its branch")
    if e.alpha_prime * x0 + e.beta_prime * x0 ** (1 + e.psi) > 1.0 + 1e-12:
        raise InvalidParameterError("germ at 0 exceeds 1 before the cusp")
    m = CuspMap("analytic", float(x0), exponents, float(blend))
    m.check_invariants()
    for br, (lo, hi) in ((LEFT, (0.0, x0)), (RIGHT, (x0, 1.0))):
        xs = np.linspace(lo, hi, 10_001)[1:-1]
        dt = m.deriv(xs)
        if (br == LEFT and np.any(dt <= 0)) or (br == RIGHT and np.any(dt >= 0)):
            raise InvalidParameterError("blended branch derivative changes sign")
    return m


# ---------------------------------------------------------------- fitting


def _linfit(x, y):
    """Least-squares line; returns slope, intercept, R^2."""
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 0.0
    return float(coef[0]), float(coef[1]), float(r2)


def _best_decade(d, r, band=CUSP_BAND, min_points=50, step=0.25):
    """Log-log fit of r vs d over the one-decade window with the largest R^2.

    Returns (slope, log-intercept, R^2, (lo, hi)) or None.
    """
    ok = (d > 0) & (r > 0)
    d, r = d[ok], r[ok]
    if len(d) < min_points:
        return None
    ld, lr = np.log10(d), np.log10(r)
    best = None
    k = math.log10(band[0])
    top = math.log10(band[1]) - 1.0
    while k <= top + 1e-9:
        m = (ld >= k) & (ld < k + 1.0)
        if m.sum() >= min_points:
            s, c, r2 = _linfit(ld[m], lr[m])
            if best is None or r2 > best[2]:
                best = (s, c, r2, (10 ** k, 10 ** (k + 1.0)))
        k += step
    return best


def _boundary_slope(e, y, quantile=BOUNDARY_QUANTILE, min_points=50):
    """Secant slope of y vs distance-to-boundary e with free intercept."""
    n = max(min_points, int(math.ceil(quantile * len(e))))
    if len(e) < max(min_points, 3):
        raise FitError("too few samples near the boundary", trace=[len(e)])
    idx = np.argsort(e)[:n]
    s, c, r2 = _linfit(e[idx], y[idx])
    return s, c, r2, float(e[idx].max())


def _boundary_germ(e, y, slope, band=(1e-4, 1.0)):
    """Exponent and coefficient of the correction y - slope*e ~ b e**(1+p)."""
    fit = _best_decade(e, y - slope * e, band=band, min_points=20)
    if fit is None:
        return float("nan"), float("nan"), None
    s, c, r2, win = fit
    return s - 1.0, 10 ** c, win


def fit_exponents(x, y, x0: float) -> tuple[LocalExponents, dict]:
    """Fit the four local germs from samples (x, T(x)) with known cusp ``x0``.

    Boundary slopes use a secant with free intercept over the samples nearest
    the end point; the cusp laws and the boundary corrections use log-log
    least squares over the one-decade window of largest R^2.  Returns the
    exponents and a dict of windows and diagnostics.  Germ corrections that
    cannot be resolved are reported as NaN.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    left = x < x0
    right = x > x0
    xl, yl = x[left], y[left]
    xr, yr = x[right], y[right]

    ap, ap_c, ap_r2, ap_w = _boundary_slope(xl, yl)
    al, al_c, al_r2, al_w = _boundary_slope(1.0 - xr, yr)
    al = -al if al < 0 else al
    # the right-branch fit is y vs (1-x), slope positive
    psi, bp, psi_w = _boundary_germ(xl, yl, ap)
    kap, bt, kap_w = _boundary_germ(1.0 - xr, yr, al)

    fl = _best_decade(x0 - xl, 1.0 - yl)
    fr = _best_decade(xr - x0, 1.0 - yr)
    if fl is None or fr is None:
        raise FitError("not enough samples near the cusp for the power laws",
                       trace=[int(left.sum()), int(right.sum())])
    exps = LocalExponents(alpha_prime=ap, psi=psi, beta_prime=bp, alpha=al, kappa=kap,
                          beta_tilde=bt, A_prime=10 ** fl[1], B_prime=fl[0],
                          A=10 ** fr[1], B=fr[0])
    windows = {
        "alpha_prime": [0.0, ap_w], "alpha": [0.0, al_w],
        "psi": psi_w, "kappa": kap_w,
        "B_prime": list(fl[3]), "B": list(fr[3]),
        "r2": {"alpha_prime": ap_r2, "alpha": al_r2, "B_prime": fl[2], "B": fr[2]},
        "intercepts": {"alpha_prime": ap_c, "alpha": al_c},
    }
    return exps, windows


def _cusp_sse(x, y, x0c, band=REFINE_BAND):
    """Residual of the two log-log cusp fits for a trial cusp location."""
    total = 0.0
    for side in (x < x0c, x > x0c):
        d = np.abs(x[side] - x0c)
        r = 1.0 - y[side]
        m = (d >= band[0]) & (d <= band[1]) & (r > 0)
        if m.sum() < 10:
            return np.inf
        ld, lr = np.log(d[m]), np.log(r[m])
        s, c, _ = _linfit(ld, lr)
        total += float(np.mean((lr - s * ld - c) ** 2))
    return total


def locate_cusp(x, y, n_bins: int = 256) -> tuple[float, dict]:
    """Cusp location from the argmax of binned medians, refined by power laws.

    The refined value minimizes the combined residual of the two one-sided
    laws 1 - T ~ A |x - x0|**B, both of which reach height 1 at the trial x0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    med = np.full(n_bins, -np.inf)
    for b in np.unique(idx):
        med[b] = np.median(y[idx == b])
    b = int(np.argmax(med))
    h = 1.0 / n_bins
    x_arg = 0.5 * (edges[b] + edges[b + 1])
    res = minimize_scalar(lambda c: _cusp_sse(x, y, c), bounds=(x_arg - 1.5 * h,
                          x_arg + 1.5 * h), method="bounded", options={"xatol": 1e-10})
    x_fit = float(res.x)
    if not np.isfinite(res.fun) or abs(x_fit - x_arg) > 1.5 * h:
        raise FitError("cusp refinement disagrees with the binned maximum",
                       trace=[x_arg, x_fit, float(res.fun)])
    return x_fit, {"x0_argmax": x_arg, "x0_refined": x_fit, "bin_width": h,
                   "refine_residual": float(res.fun)}


def _branch_knots(d, y, e, d_max, n_knots, min_count=20, mad_cut=5.0, max_z=3.0):
    """Binned medians of y in u = d**e, pinned at u=0 (y=1) and u=d_max**e (y=0).

    Knots that break monotonicity only within sampling error are pooled by a
    weighted isotonic fit; a violation larger than ``max_z`` standard errors
    of the median is a genuine fold and raises :class:`FitError`.
    """
    u = d ** e
    u_max = d_max ** e
    edges = np.linspace(0.0, u_max, n_knots + 1)
    idx = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, n_knots - 1)
    uk, yk, se = [0.0], [1.0], [0.0]
    n_rejected = 0
    pend_u, pend_y = [], []
    for b in range(n_knots):
        sel = idx == b
        ub, yb = u[sel], y[sel]
        if len(yb):
            med = np.median(yb)
            mad = np.median(np.abs(yb - med)) * 1.4826
            if mad > 0:
                keep = np.abs(yb - med) <= mad_cut * mad
                n_rejected += int((~keep).sum())
                ub, yb = ub[keep], yb[keep]
        pend_u.extend(ub)
        pend_y.extend(yb)
        # merge sparse bins into the next one
        if len(pend_u) >= min_count:
            py = np.asarray(pend_y)
            med = float(np.median(py))
            uk.append(float(np.median(pend_u)))
            yk.append(med)
            # asymptotic standard error of a median, floored for degenerate bins
            mad = float(np.median(np.abs(py - med))) * 1.4826
            se.append(max(1.2533 * mad / math.sqrt(len(py)), 1e-12))
            pend_u, pend_y = [], []
    uk.append(u_max)
    yk.append(0.0)
    se.append(0.0)
    uk, yk, se = np.array(uk), np.array(yk), np.array(se)
    # the last merged bin may sit on the pinned end point
    keep = np.concatenate(([True], np.diff(uk) > 0))
    uk, yk, se = uk[keep], yk[keep], se[keep]
    if np.any(np.diff(yk) >= 0):
        w = np.where(se > 0, 1.0 / np.maximum(se, 1e-12) ** 2, 1e30)
        fit = isotonic_regression(yk, weights=w, increasing=False).x
        z = np.abs(fit - yk) / np.where(se > 0, se, np.inf)
        if z.max() > max_z:
            bad = int(np.argmax(z))
            raise FitError("binned branch is not monotone after outlier rejection",
                           trace=[float(uk[bad]), float(yk[bad]), float(fit[bad])])
        # collapse pooled blocks to one knot each
        blocks = np.concatenate(([0], np.flatnonzero(np.diff(fit) != 0) + 1, [len(fit)]))
        n = len(fit)
        u_new = []
        for i, j in zip(blocks[:-1], blocks[1:]):
            if i == 0:
                u_new.append(uk[0])
            elif j == n:
                u_new.append(uk[-1])
            else:
                u_new.append(uk[i:j].mean())
        uk = np.array(u_new)
        yk = fit[blocks[:-1]]
    return uk, yk, n_rejected


def build_empirical(pairs, knots_per_branch: int = 64, n_cusp_bins: int = 256) -> CuspMap:
    """Fit a cusp map to normalized consecutive-maxima pairs.

    ``pairs`` is a :class:`NormalizedPairs` or an ``(x, y)`` tuple.
    """
    if hasattr(pairs, "s"):
        x, y = np.asarray(pairs.s, dtype=float), np.asarray(pairs.s_next, dtype=float)
    else:
        x, y = (np.asarray(a, dtype=float) for a in pairs)
    if len(x) < MIN_PAIRS:
        raise PreconditionError(f"need at least {MIN_PAIRS} pairs, got {len(x)}")
    if knots_per_branch < MIN_KNOTS:
        raise PreconditionError(f"knots_per_branch must be >= {MIN_KNOTS}")
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        raise InvalidInputError("pairs contain non-finite values")
    x0, cusp_diag = locate_cusp(x, y, n_cusp_bins)
    exps, windows = fit_exponents(x, y, x0)
    if not (0 < exps.B_prime < 1 and 0 < exps.B < 1):
        raise FitError("cusp exponents outside (0, 1)", trace=[exps.B_prime, exps.B])
    left, right = x < x0, x > x0
    ul, yl, rej_l = _branch_knots(x0 - x[left], y[left], exps.B_prime, x0, knots_per_branch)
    ur, yr, rej_r = _branch_knots(x[right] - x0, y[right], exps.B, 1.0 - x0,
                                  knots_per_branch)
    # dy/du at the outer ends so that |DT| matches the fitted boundary slopes
    eL, eR = exps.B_prime, exps.B
    knots = {"u_left": ul.tolist(), "y_left": yl.tolist(),
             "u_right": ur.tolist(), "y_right": yr.tolist(),
             "end_slope_left": -exps.alpha_prime / (eL * x0 ** (eL - 1.0)),
             "end_slope_right": -exps.alpha / (eR * (1.0 - x0) ** (eR - 1.0))}
    diag = {"cusp": cusp_diag, "windows": windows, "n_pairs": int(len(x)),
            "outliers_rejected": rej_l + rej_r, "exponent_problems": exps.problems()}
    m = CuspMap("empirical", x0, exps, DEFAULT_BLEND, knots, diag)
    m.check_invariants()
    return m


def sup_distance(a: IntervalMap, b: IntervalMap, n: int = 10_000,
                 exclude: float = 1e-3) -> float:
    """Sup of |a - b| on a grid, skipping ``exclude``-neighborhoods of both cusps."""
    xs = np.linspace(0.0, 1.0, n)
    keep = (np.abs(xs - a.x0) > exclude) & (np.abs(xs - b.x0) > exclude)
    xs = xs[keep]
    return float(np.max(np.abs(a.eval(xs) - b.eval(xs))))


# ---------------------------------------------------------------- lattice


@dataclass
class PreimageLattice:
    """Preimages of x0 organizing the first-return structure.

    ``a_prime[p]`` = T1^-p a0', ``a[p]`` = T2^-1 T1^-(p-1) a0' (a[0] = a0),
    ``b[p]`` and ``b_prime[p]`` (p >= 1) are the right and left preimages of
    a[p-1].  Distances of b, b' to the cusp are stored separately at full
    relative precision.
    """

    x0: float
    a: np.ndarray
    a_prime: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray
    db: np.ndarray
    db_prime: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.a) - 1

    @property
    def a0(self) -> float:
        return float(self.a[0])

    @property
    def a0_prime(self) -> float:
        return float(self.a_prime[0])

    def as_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in asdict(self).items()}

    def ratios(self, p_lo: int, p_hi: int) -> dict:
        """Geometric ratios and log-slopes of the four families over [p_lo, p_hi]."""
        p = np.arange(p_lo, p_hi + 1)
        one_minus_a = 1.0 - self.a
        return {
            "a_prime": self.a_prime[p] / self.a_prime[p + 1],
            "one_minus_a": one_minus_a[p] / one_minus_a[p + 1],
            "slope_b": _linfit(p.astype(float), np.log(self.db[p]))[0],
            "slope_b_prime": _linfit(p.astype(float), np.log(self.db_prime[p]))[0],
        }


def build_lattice(tmap: IntervalMap, depth: int, tol: float = 1e-14) -> PreimageLattice:
    if depth < 3:
        raise PreconditionError("lattice depth must be >= 3")
    x0 = tmap.x0
    a0, _ = tmap.invert_with_distance(RIGHT, x0, tol)
    a0p, _ = tmap.invert_with_distance(LEFT, x0, tol)
    P = int(depth)
    ap = np.empty(P + 1)
    a = np.empty(P + 1)
    b = np.full(P + 1, np.nan)
    bp = np.full(P + 1, np.nan)
    db = np.full(P + 1, np.nan)
    dbp = np.full(P + 1, np.nan)
    ap[0], a[0] = a0p, a0
    for p in range(1, P + 1):
        ap[p] = tmap.invert_with_distance(LEFT, ap[p - 1], tol)[0]
        a[p] = tmap.invert_with_distance(RIGHT, ap[p - 1], tol)[0]
    for p in range(1, P + 1):
        b[p], db[p] = tmap.invert_with_distance(RIGHT, a[p - 1], tol)
        bp[p], dbp[p] = tmap.invert_with_distance(LEFT, a[p - 1], tol)
    lat = PreimageLattice(x0, a, ap, b, bp, db, dbp)
    _check_lattice(tmap, lat)
    return lat


def _check_lattice(tmap, lat: PreimageLattice, tol: float = 1e-9) -> None:
    if not (0 < lat.a0_prime < lat.x0 < lat.a0 < 1):
        raise LatticeError("a0' < x0 < a0 violated")
    if np.any(np.diff(lat.a_prime) >= 0) or lat.a_prime[-1] <= 0:
        raise LatticeError("a'_p is not strictly decreasing and positive")
    if np.any(np.diff(lat.a) <= 0) or lat.a[-1] >= 1:
        raise LatticeError("a_p is not strictly increasing below 1")
    if np.any(np.diff(lat.db[1:]) >= 0) or np.any(lat.db[1:] <= 0):
        raise LatticeError("b_p does not decrease strictly to x0")
    if np.any(np.diff(lat.db_prime[1:]) >= 0) or np.any(lat.db_prime[1:] <= 0):
        raise LatticeError("b'_p does not increase strictly to x0")
    if not (lat.b[1] < lat.a0 and lat.b_prime[1] > lat.a0_prime):
        raise LatticeError("b_1, b'_1 outside (a0', a0)")
    worst = max(abs(tmap.eval(lat.a0) - lat.x0), abs(tmap.eval(lat.a0_prime) - lat.x0))
    for p in range(1, lat.depth + 1):
        worst = max(worst,
                    abs(tmap.eval(lat.a_prime[p]) - lat.a_prime[p - 1]),
                    abs(tmap.eval(lat.a[p]) - lat.a_prime[p - 1]),
                    abs(tmap.eval_at_distance(RIGHT, lat.db[p]) - lat.a[p - 1]),
                    abs(tmap.eval_at_distance(LEFT, lat.db_prime[p]) - lat.a[p - 1]))
    if worst > tol:
        raise LatticeError(f"defining relations violated by {worst:.3g}")


# ---------------------------------------------------------------- Lemma 1


def p_star(alpha_dd: float, alpha: float, alpha_prime: float) -> int:
    """Largest return time for which the induced expansion needs checking."""
    return int(math.floor(1.0 + math.log(alpha_dd / alpha) / math.log(alpha_prime)))


@dataclass
class Lemma1Report:
    d10: float
    d10_at: float
    check_i: bool
    check_ii: bool
    check_iii: bool
    alpha_double_prime: float
    p_star: int
    products: list
    dt_b1: float
    dt_a0_prime: float

    @property
    def passed(self) -> bool:
        return self.check_i and self.check_ii and self.check_iii

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def min_abs_derivative(tmap: IntervalMap, lo: float, hi: float, n_grid: int = 2001,
                       xtol: float = 1e-8) -> tuple[float, float]:
    """inf |DT| over (lo, hi): grid scan followed by bounded scalar refinement."""
    xs = np.linspace(lo, hi, n_grid)[1:-1]
    g = np.abs(tmap.deriv(xs))
    i = int(np.argmin(g))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, len(xs) - 1)]
    res = minimize_scalar(lambda t: abs(tmap.deriv(t)), bounds=(a, b), method="bounded",
                          options={"xatol": xtol})
    if res.fun < g[i]:
        return float(res.fun), float(res.x)
    return float(g[i]), float(xs[i])


def check_lemma1(tmap: CuspMap, alpha_dd: float = 1.01, lattice: PreimageLattice | None = None,
                 p_max: int | None = None) -> Lemma1Report:
    """Check the three conditions that make the induced map uniformly expanding.

    (i) inf of |DT| over (b1, a0) exceeds 1; (ii) |DT(b1)| >= DT(a0');
    (iii) |DT(a_{p-1})| DT(a'_{p-2}) ... DT(a'_0) > alpha'' for p <= p*.
    ``p_max`` extends (iii) beyond p* when given.
    """
    e = tmap.exponents
    ps = p_star(alpha_dd, e.alpha, e.alpha_prime) if alpha_dd > 0 else 0
    need = max(ps, p_max or 0, 1)
    if lattice is None:
        lattice = build_lattice(tmap, max(need, 3))
    if lattice.depth < need:
        raise DepthError(f"lattice depth {lattice.depth} < required {need}")
    d10, d10_at = min_abs_derivative(tmap, float(lattice.b[1]), lattice.a0)
    if not (1.0 < alpha_dd <= min(d10, e.alpha_prime)):
        raise PreconditionError(
            f"need 1 < alpha'' <= min(d10={d10:.4g}, alpha'={e.alpha_prime:.4g})")
    dt_b1 = abs(tmap.deriv_at_distance(RIGHT, float(lattice.db[1])))
    dt_a0p = float(tmap.deriv(lattice.a0_prime))
    prods = []
    run = 1.0
    for p in range(1, need + 1):
        if p >= 2:
            run *= float(tmap.deriv(lattice.a_prime[p - 2]))
        prods.append(abs(float(tmap.deriv(lattice.a[p - 1]))) * run)
    return Lemma1Report(d10=d10, d10_at=d10_at, check_i=d10 > 1.0,
                        check_ii=dt_b1 >= dt_a0p, check_iii=all(v > alpha_dd for v in prods),
                        alpha_double_prime=alpha_dd, p_star=ps, products=prods,
                        dt_b1=dt_b1, dt_a0_prime=dt_a0p)
