"""Invariant density of a cusp map: ergodic histogram, Ulam matrix, transfer
operator iteration, boundary scaling and the Bessel-normalized ansatz."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla
from scipy.optimize import minimize
from scipy.special import gammaln

from . import _mapkernels as _mk
from .errors import (ConvergenceError, FitError, GridError, InvalidInputError,
                     PreconditionError, WindowError)

log = logging.getLogger(__name__)

METHODS = ("histogram", "ulam", "pf_iteration", "reconstruction", "induced", "analytic")
CUSP_HIT = 1e-14


@dataclass(frozen=True)
class Grid:
    """Uniform bins on [lo, hi]; ``n_bins`` a power of two."""

    n_bins: int
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        n = int(self.n_bins)
        if n < 2 or n & (n - 1):
            raise GridError(f"n_bins must be a power of two, got {n}")
        if not self.hi > self.lo:
            raise GridError("grid needs hi > lo")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    def index(self, x) -> np.ndarray:
        i = np.floor((np.asarray(x) - self.lo) / self.width).astype(np.int64)
        return np.clip(i, 0, self.n_bins - 1)


def unit_grid(n_bins: int) -> Grid:
    if n_bins < 2 ** 9:
        raise PreconditionError("density grids need at least 2^9 bins")
    return Grid(n_bins)


@dataclass
class DensityEstimate:
    grid: Grid
    values: np.ndarray
    method: str
    count: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_bins,):
            raise InvalidInputError("values do not match the grid")
        if np.any(self.values < 0) or np.any(~np.isfinite(self.values)):
            raise InvalidInputError("density values must be finite and >= 0")

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.width)

    def normalized(self) -> "DensityEstimate":
        m = self.mass
        if m <= 0:
            raise InvalidInputError("density has zero mass")
        return DensityEstimate(self.grid, self.values / m, self.method, self.count,
                               dict(self.diagnostics))

    def __call__(self, x) -> np.ndarray:
        """Piecewise-linear interpolation between bin centers (clamped)."""
        return np.interp(x, self.grid.centers, self.values)

    def integrate(self, a, b) -> np.ndarray:
        """Exact integral of the piecewise-linear interpolant over [a, b]."""
        return _cumulative(self, np.asarray(b, dtype=float)) - _cumulative(
            self, np.asarray(a, dtype=float))

    def argmax(self) -> float:
        return float(self.grid.centers[int(np.argmax(self.values))])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["bin_center", "value", "method"])
            for c, v in zip(self.grid.centers, self.values):
                wr.writerow([repr(float(c)), repr(float(v)), self.method])

    @classmethod
    def from_csv(cls, path) -> "DensityEstimate":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise InvalidInputError(f"{path} is empty")
        c = np.array([float(r["bin_center"]) for r in rows])
        h = c[1] - c[0]
        grid = Grid(len(c), float(c[0] - h / 2), float(c[-1] + h / 2))
        if abs(grid.lo) < 1e-9 and abs(grid.hi - 1.0) < 1e-9:
            grid = Grid(len(c))
        return cls(grid, np.array([float(r["value"]) for r in rows]), rows[0]["method"])


def _cumulative(est: DensityEstimate, x: np.ndarray) -> np.ndarray:
    g = est.grid
    nodes = np.concatenate(([g.lo], g.centers, [g.hi]))
    vals = np.concatenate(([est.values[0]], est.values, [est.values[-1]]))
    seg = 0.5 * (vals[1:] + vals[:-1]) * np.diff(nodes)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    xc = np.clip(x, g.lo, g.hi)
    k = np.clip(np.searchsorted(nodes, xc, side="right") - 1, 0, len(nodes) - 2)
    dx = xc - nodes[k]
    slope = (vals[k + 1] - vals[k]) / np.diff(nodes)[k]
    return cum[k] + dx * (vals[k] + 0.5 * slope * dx)


# ---------------------------------------------------------------- histogram


@nb.njit(cache=True, nogil=True)
def _orbit_histogram(M, x, n_iters, transient, n_bins, seed, hit, lo=0.0, hi=1.0):
    """Count ``n_iters`` orbit points falling in [lo, hi) into uniform bins."""
    np.random.seed(seed)
    counts = np.zeros(n_bins, dtype=np.int64)
    x0 = M[1][0]
    restarts = 0
    i = 0
    burn = transient
    while i < n_iters:
        x = _mk.t_eval(M, x)
        if abs(x - x0) < hit or x <= 0.0 or x >= 1.0:
            restarts += 1
            x = np.random.random()
            burn = transient
            continue
        if burn > 0:
            burn -= 1
            continue
        if x < lo or x >= hi:
            continue
        k = int((x - lo) / (hi - lo) * n_bins)
        if k >= n_bins:
            k = n_bins - 1
        counts[k] += 1
        i += 1
    return counts, restarts


def histogram_density(tmap, n_iters: int, grid: Grid, seed: int = 0,
                      transient: int = 1000) -> DensityEstimate:
    """Birkhoff histogram of one long orbit.

    An orbit that lands within 1e-14 of the cusp (or on an end point) is
    restarted from a fresh random point with a new transient.
    """
    if n_iters < 100_000:
        raise PreconditionError("histogram_density needs n_iters >= 1e5")
    rng = np.random.default_rng(seed)
    start = float(rng.uniform(0.05, 0.95))
    counts, restarts = _orbit_histogram(tmap.kernel, start, int(n_iters), int(transient),
                                        grid.n_bins, int(seed), CUSP_HIT)
    if restarts:
        log.info("histogram orbit restarted %d times after cusp or end-point hits",
                 restarts)
    vals = counts / (n_iters * grid.width)
    return DensityEstimate(grid, vals, "histogram", int(n_iters),
                           {"restarts": int(restarts), "seed": int(seed)})


# ---------------------------------------------------------------- Ulam


@nb.njit(cache=True, nogil=True)
def _ulam_targets(M, n_bins, mc):
    out = np.empty(n_bins * mc, dtype=np.int64)
    h = 1.0 / n_bins
    for i in range(n_bins):
        for j in range(mc):
            y = _mk.t_eval(M, (i + (j + 0.5) / mc) * h)
            k = int(y * n_bins)
            if k >= n_bins:
                k = n_bins - 1
            if k < 0:
                k = 0
            out[i * mc + j] = k
    return out


def ulam_matrix(tmap, grid: Grid, mc_per_bin: int) -> sparse.csr_matrix:
    """Row-stochastic bin-transition matrix from stratified samples."""
    n = grid.n_bins
    tgt = _ulam_targets(tmap.kernel, n, int(mc_per_bin))
    rows = np.repeat(np.arange(n), mc_per_bin)
    P = sparse.coo_matrix((np.full(len(tgt), 1.0 / mc_per_bin), (rows, tgt)), shape=(n, n))
    return P.tocsr()


def ulam_density(tmap, grid: Grid, mc_per_bin: int = 256, tol: float = 1e-12,
                 max_iter: int = 10_000) -> DensityEstimate:
    """Leading left eigenvector of the Ulam matrix by power iteration."""
    if grid.n_bins < 2 ** 9:
        raise PreconditionError("ulam_density needs at least 2^9 bins")
    if mc_per_bin < 64:
        raise PreconditionError("mc_per_bin must be >= 64")
    P = ulam_matrix(tmap, grid, mc_per_bin)
    PT = P.T.tocsr()
    pi = np.full(grid.n_bins, 1.0 / grid.n_bins)
    solver = "power"
    for it in range(1, max_iter + 1):
        new = PT @ pi
        new /= new.sum()
        change = np.abs(new - pi).sum()
        pi = new
        if change < tol:
            break
    else:
        # slow or periodic mixing: solve pi P = pi, sum(pi) = 1 directly
        pi = _stationary_direct(PT)
        solver = "direct"
        if pi is None:
            raise ConvergenceError(f"power iteration stalled, last change {change:.3g}, "
                                   "and the direct stationary solve failed")
    img = PT @ pi
    eig = float(img.sum() / pi.sum())
    resid = float(np.abs(img - eig * pi).sum())
    return DensityEstimate(grid, pi / grid.width, "ulam", it,
                           {"eigenvalue": eig, "residual": resid, "solver": solver,
                            "mc_per_bin": int(mc_per_bin)})


def _stationary_direct(PT: sparse.csr_matrix, tol: float = 1e-9) -> np.ndarray | None:
    """Unique stationary vector of a stochastic matrix, or None if not unique."""
    n = PT.shape[0]
    A = (PT - sparse.identity(n, format="csr")).tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[-1] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        pi = spla.spsolve(A.tocsc(), b)
    if not np.all(np.isfinite(pi)) or pi.min() < -tol:
        return None
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.abs(PT @ pi - pi).sum() > 1e3 * tol:
        return None
    return pi


# ---------------------------------------------------------------- transfer operator


def pf_operator(tmap, grid: Grid) -> tuple[sparse.csr_matrix, int]:
    """Transfer operator on bin centers with linear interpolation.

    Row k gives (P rho)(c_k) = sum over both inverse branches of
    rho(T_l^-1 c_k) / |DT(T_l^-1 c_k)|.  The bin holding the cusp is left
    empty; callers fill it by interpolation.  Returns (matrix, cusp bin).
    """
    c = grid.centers
    n = grid.n_bins
    rows, cols, vals = [], [], []
    for br in (_mk.LEFT, _mk.RIGHT):
        pre = np.empty(n)
        _mk.invert_array(tmap.kernel, br, np.ascontiguousarray(c), 1e-14, pre)
        w = 1.0 / np.abs(tmap.deriv(pre))
        j = np.clip(np.searchsorted(c, pre) - 1, 0, n - 2)
        f = np.clip((pre - c[j]) / (c[j + 1] - c[j]), 0.0, 1.0)
        k = np.arange(n)
        rows += [k, k]
        cols += [j, j + 1]
        vals += [w * (1 - f), w * f]
    A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows),
                                                  np.concatenate(cols))), shape=(n, n))
    A = A.tocsr()
    kc = int(grid.index(tmap.x0))
    A = A.tolil()
    A.rows[kc] = []
    A.data[kc] = []
    return A.tocsr(), kc


def _fill_cusp(rho, kc):
    n = len(rho)
    est = []
    if kc >= 2:
        est.append(2 * rho[kc - 1] - rho[kc - 2])
    if kc <= n - 3:
        est.append(2 * rho[kc + 1] - rho[kc + 2])
    rho[kc] = max(0.0, float(np.mean(est)))


def _pf_apply(A, kc, rho, h):
    new = A @ rho
    _fill_cusp(new, kc)
    return new / (new.sum() * h)


def pf_iterate(tmap, init: DensityEstimate, n_steps: int = 1000, tol: float = 1e-10
               ) -> DensityEstimate:
    """Iterate the transfer operator from ``init`` until the L1 change < tol."""
    if abs(init.mass - 1.0) > 1e-6:
        raise PreconditionError("pf_iterate needs a normalized initial density")
    grid = init.grid
    A, kc = pf_operator(tmap, grid)
    log.info("transfer operator: cusp bin %d excluded and interpolated", kc)
    h = grid.width
    rho = init.values.copy()
    change = np.inf
    steps = 0
    for steps in range(1, n_steps + 1):
        new = _pf_apply(A, kc, rho, h)
        change = float(np.abs(new - rho).sum() * h)
        rho = new
        if change < tol:
            break
    resid = float(np.abs(_pf_apply(A, kc, rho, h) - rho).sum() * h)
    return DensityEstimate(grid, rho, "pf_iteration", steps,
                           {"last_change": change, "fixed_point_residual": resid,
                            "cusp_bin": kc})


def pf_residual(tmap, est: DensityEstimate) -> float:
    A, kc = pf_operator(tmap, est.grid)
    h = est.grid.width
    return float(np.abs(_pf_apply(A, kc, est.values, h) - est.values).sum() * h)


def cusp_continuity(tmap, est: DensityEstimate) -> dict:
    """Compare rho(x0) with rho(a0')/|DT(a0')| + rho(a0)/|DT(a0)|."""
    a0p = tmap.invert_branch("left", tmap.x0)
    a0 = tmap.invert_branch("right", tmap.x0)
    lhs = float(est(tmap.x0))
    rhs = float(est(a0p) / abs(tmap.deriv(a0p)) + est(a0) / abs(tmap.deriv(a0)))
    return {"rho_x0": lhs, "transfer": rhs, "gap": abs(lhs - rhs)}


def lipschitz_constant(est: DensityEstimate, x0: float, exclude_bins: int = 3) -> float:
    """Largest slope between adjacent bins away from the cusp."""
    slopes = np.abs(np.diff(est.values)) / est.grid.width
    kc = int(est.grid.index(x0))
    lo, hi = max(kc - exclude_bins, 0), kc + exclude_bins
    mask = np.ones(len(slopes), dtype=bool)
    mask[lo:hi] = False
    return float(slopes[mask].max())


# ---------------------------------------------------------------- boundary scaling


def boundary_exponent(est: DensityEstimate, side: str, min_bins: int = 8,
                      return_window: bool = False):
    """Log-log slope of the density against the distance to 0 or 1.

    Candidate windows are [2^-k, 2^(4-k)]; the one with the largest R^2 among
    windows holding at least ``min_bins`` positive bins wins.
    """
    if est.grid.n_bins < 2 ** 11:
        raise PreconditionError("boundary_exponent needs at least 2^11 bins")
    c = est.grid.centers
    dist = c if side == "zero" else 1.0 - c
    best = None
    k_max = int(math.log2(est.grid.n_bins))
    for k in range(4, k_max + 1):
        lo, hi = 2.0 ** -k, 2.0 ** (4 - k)
        m = (dist >= lo) & (dist <= hi) & (est.values > 0)
        if m.sum() < min_bins:
            continue
        lx, ly = np.log(dist[m]), np.log(est.values[m])
        A = np.vstack([lx, np.ones_like(lx)]).T
        coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
        ss = np.sum((ly - ly.mean()) ** 2)
        r2 = 1 - np.sum((ly - A @ coef) ** 2) / ss if ss > 0 else 1.0
        if best is None or r2 > best[1]:
            best = (float(coef[0]), float(r2), (lo, hi))
    if best is None:
        raise WindowError(f"fewer than {min_bins} usable bins in every window")
    return (best[0], best[2]) if return_window else best[0]


# ---------------------------------------------------------------- ansatz


def bessel_iv(nu: float, z: float, rtol: float = 1e-12) -> float:
    """Modified Bessel function I_nu(z) by its ascending series in log domain."""
    if z < 0 or nu < 0:
        raise InvalidInputError("bessel_iv needs nu >= 0 and z >= 0")
    if z == 0:
        return 1.0 if nu == 0 else 0.0
    lz = math.log(z / 2)
    total = 0.0
    m = 0
    while True:
        term = math.exp((2 * m + nu) * lz - gammaln(m + 1) - gammaln(m + nu + 1))
        total += term
        # terms decrease once m exceeds z/2; stop on a small relative term
        if m > z and term < rtol * total:
            break
        m += 1
        if m > 10_000:
            raise ConvergenceError("Bessel series did not converge")
    return total


def ansatz_normalizer(gamma: float, delta: float) -> float:
    """N with N * int_0^1 exp(-g x) x^d (1-x)^d dx = 1."""
    nu = 0.5 + delta
    iv = bessel_iv(nu, gamma / 2)
    return math.exp(nu * math.log(gamma) + gamma / 2 - 0.5 * math.log(math.pi)
                    - gammaln(1 + delta) - math.log(iv))


def ansatz(x, gamma: float, delta: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return ansatz_normalizer(gamma, delta) * np.exp(-gamma * x) * (x * (1 - x)) ** delta


@dataclass
class FitResult:
    gamma: float
    delta: float
    N: float
    residual: float
    window: tuple
    iterations: int = 0
    trace: list = field(default_factory=list)

    def density(self, x) -> np.ndarray:
        return ansatz(x, self.gamma, self.delta)

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "delta": self.delta, "N": self.N,
                "residual": self.residual, "window": list(self.window)}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2)


FIT_SEEDS = (0, 1, 2, 3, 4)


def fit_ansatz(est: DensityEstimate, window: tuple = (0.0, 1.0),
               max_iter: int = 500) -> FitResult:
    """Least-squares fit of N e^{-g x} x^d (1-x)^d to a density estimate.

    Nelder-Mead over (log g, log d) from five fixed starting points; the
    converged start with the smallest residual wins.
    """
    est = est.normalized()
    x = est.grid.centers
    m = (x >= window[0]) & (x <= window[1])
    x, y = x[m], est.values[m]
    h = est.grid.width

    def loss(p):
        g, d = math.exp(p[0]), math.exp(p[1])
        if not (1e-3 < g < 200 and 1e-3 < d < 50):
            return 1e6
        return float(np.sum((ansatz(x, g, d) - y) ** 2) * h)

    trace = []
    best = None
    for s in FIT_SEEDS:
        rng = np.random.default_rng(s)
        p0 = np.array([math.log(rng.uniform(0.5, 10.0)), math.log(rng.uniform(0.5, 4.0))])
        res = minimize(loss, p0, method="Nelder-Mead",
                       options={"maxiter": max_iter, "xatol": 1e-10, "fatol": 1e-14})
        trace.append({"seed": s, "start": np.exp(p0).tolist(), "converged": bool(res.success),
                      "loss": float(res.fun), "nit": int(res.nit)})
        if res.success and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise FitError("ansatz fit did not converge from any start", trace=trace)
    g, d = float(np.exp(best.x[0])), float(np.exp(best.x[1]))
    return FitResult(g, d, ansatz_normalizer(g, d), math.sqrt(best.fun), tuple(window),
                     int(best.nit), trace)


def constants_relation(fit: FitResult, exps) -> dict:
    """(1/a')^{1/B*} + (1/(a e^{g B*}))^{1/B*}, which should be close to 1."""
    bs = exps.B_star
    v = (1 / exps.alpha_prime) ** (1 / bs) + (1 / (exps.alpha * math.exp(fit.gamma * bs))) ** (
        1 / bs)
    return {"value": float(v), "residual": float(abs(v - 1))}


# ---------------------------------------------------------------- comparison


def _coarsen(est: DensityEstimate, n: int) -> np.ndarray:
    k = est.grid.n_bins // n
    return est.values.reshape(n, k).mean(axis=1)


def l1_distance(a: DensityEstimate, b: DensityEstimate) -> float:
    """L1 distance, bin-averaging the finer estimate onto the coarser grid."""
    ga, gb = a.grid, b.grid
    if (ga.lo, ga.hi) != (gb.lo, gb.hi):
        raise GridError("estimates live on different intervals")
    n = min(ga.n_bins, gb.n_bins)
    if ga.n_bins % n or gb.n_bins % n:
        raise GridError("grids are not nested")
    va = _coarsen(a, n) if ga.n_bins != n else a.values
    vb = _coarsen(b, n) if gb.n_bins != n else b.values
    return float(np.abs(va - vb).sum() * (ga.hi - ga.lo) / n)


def samples_density(x, grid: Grid, method: str = "histogram") -> DensityEstimate:
    """Normalized histogram of raw samples on ``grid``."""
    x = np.asarray(x, dtype=float)
    counts = np.bincount(grid.index(x), minlength=grid.n_bins)
    return DensityEstimate(grid, counts / (len(x) * grid.width), method, int(len(x)))
