"""First-return dynamics on I = (a0', a0) minus x0: cylinders, symbolic coding,
return-time statistics and reconstruction of the global density from the
induced one."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import _mapkernels as _mk
from .cuspmap import IntervalMap, PreimageLattice, build_lattice
from .density import CUSP_HIT, DensityEstimate, Grid, _orbit_histogram
from .errors import (CodingAbortError, DepthError, NonReturningError, PartitionError,
                     PreconditionError, TruncationError, WindowError)

log = logging.getLogger(__name__)

RETURN_CAP = 10_000
ENDPOINT_GAP = 1e-12
CODING_GAP = 1e-12
LEFT_SIDE, RIGHT_SIDE = 1, 2


# ---------------------------------------------------------------- cylinders


@dataclass(frozen=True)
class Cylinder:
    p: int
    left: float
    right: float
    side: int

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.left + self.right)


@dataclass
class CylinderPartition:
    """Intervals of I on which the first return time to I equals p.

    Z_1 = (a0', b1') u (b1, a0); Z_p = (b'_{p-1}, b'_p) u (b_p, b_{p-1}).
    Side 1 lies left of the cusp, side 2 right of it.
    """

    cylinders: list
    depth: int
    lattice: PreimageLattice

    def of_time(self, p: int) -> list:
        return [c for c in self.cylinders if c.p == p]

    @property
    def gap(self) -> tuple[float, float]:
        """Uncovered neighborhood of x0 left after ``depth`` levels."""
        lat = self.lattice
        return float(lat.b_prime[self.depth]), float(lat.b[self.depth])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["p", "left", "right", "side"])
            for c in self.cylinders:
                wr.writerow([c.p, repr(c.left), repr(c.right), c.side])


def resolvable_depth(lattice: PreimageLattice) -> int:
    """Deepest level whose cylinders are non-empty in double precision."""
    for p in range(1, lattice.depth + 1):
        prev_b = lattice.a0 if p == 1 else float(lattice.b[p - 1])
        prev_bp = lattice.a0_prime if p == 1 else float(lattice.b_prime[p - 1])
        if not (float(lattice.b[p]) < prev_b and float(lattice.b_prime[p]) > prev_bp):
            return p - 1
    return lattice.depth


def build_cylinders(lattice: PreimageLattice, depth: int | None = None) -> CylinderPartition:
    depth = lattice.depth if depth is None else int(depth)
    if depth > lattice.depth:
        raise DepthError(f"partition depth {depth} exceeds lattice depth {lattice.depth}")
    if depth < 1:
        raise PreconditionError("partition depth must be >= 1")
    lat = lattice
    cyl = [Cylinder(1, lat.a0_prime, float(lat.b_prime[1]), LEFT_SIDE),
           Cylinder(1, float(lat.b[1]), lat.a0, RIGHT_SIDE)]
    for p in range(2, depth + 1):
        cyl.append(Cylinder(p, float(lat.b_prime[p - 1]), float(lat.b_prime[p]), LEFT_SIDE))
        cyl.append(Cylinder(p, float(lat.b[p]), float(lat.b[p - 1]), RIGHT_SIDE))
    ordered = sorted(cyl, key=lambda c: c.left)
    for c in ordered:
        if not c.right > c.left:
            raise PartitionError(f"empty or reversed cylinder {c}")
    for a, b in zip(ordered[:-1], ordered[1:]):
        if a.right > b.left:
            raise PartitionError(f"cylinders overlap: {a} and {b}")
    return CylinderPartition(cyl, depth, lattice)


# ---------------------------------------------------------------- first return


@nb.njit(cache=True, nogil=True)
def _first_return(M, x, lo, hi, x0, skip_cusp, cap):
    """Iterate until the orbit re-enters (lo, hi); returns (y, tau)."""
    for tau in range(1, cap + 1):
        x = _mk.t_eval(M, x)
        if lo < x < hi and not (skip_cusp and x == x0):
            return x, tau
    return x, -1


@nb.njit(cache=True, nogil=True)
def _return_derivative(M, x, tau):
    """|D T^tau (x)| as a product along the orbit."""
    d = 1.0
    for _ in range(tau):
        d *= abs(_mk.t_deriv(M, x))
        x = _mk.t_eval(M, x)
    return d


def _domain(tmap: IntervalMap, domain):
    """(lo, hi, skip_cusp) for a named or explicit inducing set."""
    if isinstance(domain, tuple):
        lo, hi = map(float, domain)
        return lo, hi, lo < tmap.x0 < hi
    if domain == "I":
        a0p = tmap.invert_branch("left", tmap.x0)
        a0 = tmap.invert_branch("right", tmap.x0)
        return a0p, a0, True
    if domain == "right_half":
        return tmap.x0, 1.0, False
    raise PreconditionError(f"unknown inducing set {domain!r}")


def first_return_map(tmap: IntervalMap, domain, x: float, cap: int = RETURN_CAP
                     ) -> tuple[float, int]:
    """Image and first return time of ``x`` for the induced map on ``domain``."""
    lo, hi, skip = _domain(tmap, domain)
    if not lo < x < hi or (skip and x == tmap.x0):
        raise PreconditionError(f"x={x} lies outside the inducing set ({lo}, {hi})")
    y, tau = _first_return(tmap.kernel, float(x), lo, hi, tmap.x0, skip, int(cap))
    if tau < 0:
        raise NonReturningError(f"no return to ({lo}, {hi}) within {cap} iterations")
    return float(y), int(tau)


def return_derivative(tmap: IntervalMap, x: float, tau: int) -> float:
    return float(_return_derivative(tmap.kernel, float(x), int(tau)))


# ---------------------------------------------------------------- coding


@dataclass
class SymbolicCode:
    symbols: np.ndarray
    x: float

    def __len__(self):
        return len(self.symbols)

    def violations(self) -> int:
        return grammar_violations(self.symbols)


def grammar_violations(symbols) -> int:
    """Count transitions breaking n -> -(n-1), -n -> -(n-1), 0 -> any n >= 0.

    T2 maps (a_{n-1}, a_n) onto (a'_{n-1}, a'_{n-2}), so a positive symbol n
    is followed by -(n-1), with -0 read as 0.
    """
    s = np.asarray(symbols, dtype=np.int64)
    a, b = s[:-1], s[1:]
    bad = ((a > 0) & (b != -(a - 1))) | ((a < 0) & (b != a + 1)) | ((a == 0) & (b < 0))
    return int(bad.sum())


@nb.njit(cache=True, nogil=True)
def _encode(M, x, n, a, ap, x0, gap):
    """Symbols and a status: 0 ok, 1 cusp hit, 2 beyond lattice depth."""
    out = np.zeros(n, dtype=np.int64)
    P = a.shape[0] - 1
    for i in range(n):
        if abs(x - x0) < gap:
            return out[:i], 1
        if x > ap[0] and x < a[0]:
            out[i] = 0
        elif x >= a[0]:
            k = np.searchsorted(a, x, side="right")
            if k > P:
                return out[:i], 2
            out[i] = k
        else:
            # ap is decreasing: count entries >= x
            k = 0
            while k <= P and ap[k] >= x:
                k += 1
            if k > P:
                return out[:i], 2
            out[i] = -k
        x = _mk.t_eval(M, x)
    return out, 0


def encode(tmap: IntervalMap, x: float, length: int,
           lattice: PreimageLattice | None = None) -> SymbolicCode:
    """Itinerary of ``x`` through the a/a' partition.

    n > 0 for (a_{n-1}, a_n), -n for (a'_n, a'_{n-1}), 0 for I.
    """
    lat = lattice if lattice is not None else build_lattice(tmap, 200)
    sym, status = _encode(tmap.kernel, float(x), int(length), lat.a, lat.a_prime,
                          tmap.x0, CODING_GAP)
    if status == 1:
        raise CodingAbortError(f"orbit came within {CODING_GAP} of the cusp "
                               f"at step {len(sym)}")
    if status == 2:
        raise CodingAbortError(f"orbit left the depth-{lat.depth} lattice at step {len(sym)}")
    code = SymbolicCode(sym, float(x))
    nbad = code.violations()
    if nbad:
        raise CodingAbortError(f"{nbad} grammar violations in the itinerary")
    return code


# ---------------------------------------------------------------- return times


@nb.njit(cache=True, nogil=True)
def _sample_returns(M, x, n, lo, hi, x0, skip_cusp, stride, transient, seed, gap, cap):
    np.random.seed(seed)
    taus = np.empty(n, dtype=np.int64)
    got = 0
    step = 0
    for _ in range(transient):
        x = _mk.t_eval(M, x)
    while got < n:
        x = _mk.t_eval(M, x)
        if abs(x - x0) < CUSP_HIT or x <= 0.0 or x >= 1.0:
            x = np.random.random()
            for _ in range(transient):
                x = _mk.t_eval(M, x)
            continue
        step += 1
        if step % stride != 0:
            continue
        if not (lo + gap < x < hi - gap):
            continue
        if skip_cusp and abs(x - x0) < gap:
            continue
        y, tau = _first_return(M, x, lo, hi, x0, skip_cusp, cap)
        if tau < 0:
            return taus[:got], False
        taus[got] = tau
        got += 1
    return taus, True


@dataclass
class ReturnTimeStats:
    """Empirical distribution of first return times to an inducing set."""

    taus: np.ndarray
    domain: str
    tail_slope: float
    tail_window: tuple
    n_samples: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, int(self.taus.max()) + 1)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.taus, minlength=int(self.taus.max()) + 1)[1:]

    @property
    def prob(self) -> np.ndarray:
        return self.counts / self.n_samples

    def survival(self) -> np.ndarray:
        """P(tau >= n) for n = 1, 2, ..."""
        p = self.prob
        return p[::-1].cumsum()[::-1]

    @property
    def tail_ratio(self) -> float:
        return math.exp(self.tail_slope)

    def to_csv(self, path) -> None:
        p = self.prob
        cum = np.cumsum(p)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "count", "prob", "cumprob"])
            for n, c, pi, ci in zip(self.support, self.counts, p, cum):
                wr.writerow([int(n), int(c), repr(float(pi)), repr(float(ci))])


def geometric_tail(taus, min_count: int = 100, max_survival: float = 0.5
                   ) -> tuple[float, tuple[int, int]]:
    """Slope of log P(tau >= n) against n over the resolvable tail.

    The window holds every n >= 2 with P(tau >= n) <= ``max_survival`` and at
    least ``min_count`` samples with tau >= n.
    """
    taus = np.asarray(taus, dtype=np.int64)
    counts = np.bincount(taus)
    ge = counts[::-1].cumsum()[::-1]
    n = np.arange(len(ge))
    surv = ge / len(taus)
    m = (n >= 2) & (surv <= max_survival) & (ge >= min_count)
    if m.sum() < 3:
        raise WindowError("fewer than 3 tail points for the geometric fit")
    slope = np.polyfit(n[m], np.log(surv[m]), 1)[0]
    return float(slope), (int(n[m].min()), int(n[m].max()))


def return_time_stats(tmap: IntervalMap, n_samples: int, domain="I", seed: int = 0,
                      stride: int = 7, transient: int = 1000, segments: int = 1,
                      threads: int = 1) -> ReturnTimeStats:
    """Return times of points sampled along long orbits of T.

    Every ``stride``-th orbit point lying in the set is kept, so samples follow
    the invariant measure restricted to the set.  ``segments`` independent
    orbits (seeds ``seed``, ``seed+1``, ...) share the budget; the result does
    not depend on ``threads``.
    """
    if n_samples < 10_000:
        raise PreconditionError("return_time_stats needs n_samples >= 1e4")
    lo, hi, skip = _domain(tmap, domain)
    sizes = [n_samples // segments + (i < n_samples % segments) for i in range(segments)]

    def run(i):
        rng = np.random.default_rng(seed + i)
        x = float(rng.uniform(0.05, 0.95))
        return _sample_returns(tmap.kernel, x, sizes[i], lo, hi, tmap.x0, skip, int(stride),
                               int(transient), int(seed + i), ENDPOINT_GAP, RETURN_CAP)

    if threads > 1 and segments > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, range(segments)))
    else:
        parts = [run(i) for i in range(segments)]
    if not all(ok for _, ok in parts):
        raise NonReturningError(f"a sampled point did not return within {RETURN_CAP} steps")
    taus = np.concatenate([t for t, _ in parts])
    slope, win = geometric_tail(taus)
    name = domain if isinstance(domain, str) else f"({lo},{hi})"
    return ReturnTimeStats(taus, name, slope, win, int(len(taus)),
                           {"seed": seed, "stride": stride, "segments": segments,
                            "interval": [lo, hi]})


def total_variation(p, q) -> float:
    """TV distance between two distributions on 1, 2, ... given as sample arrays."""
    p = np.asarray(p, dtype=np.int64)
    q = np.asarray(q, dtype=np.int64)
    n = int(max(p.max(), q.max())) + 1
    fp = np.bincount(p, minlength=n) / len(p)
    fq = np.bincount(q, minlength=n) / len(q)
    return float(0.5 * np.abs(fp - fq).sum())


# ---------------------------------------------------------------- reconstruction


def induced_density(tmap: IntervalMap, n_points: int, n_bins: int = 2 ** 12, seed: int = 0,
                    transient: int = 1000) -> DensityEstimate:
    """Density of the induced invariant measure on I from orbit visits to I."""
    lo, hi, _ = _domain(tmap, "I")
    grid = Grid(n_bins, lo, hi)
    rng = np.random.default_rng(seed)
    start = float(rng.uniform(0.05, 0.95))
    counts, restarts = _orbit_histogram(tmap.kernel, start, int(n_points), int(transient),
                                        n_bins, int(seed), CUSP_HIT, lo, hi)
    vals = counts / (n_points * grid.width)
    return DensityEstimate(grid, vals, "induced", int(n_points),
                           {"restarts": int(restarts), "seed": int(seed)})


@nb.njit(cache=True, nogil=True)
def _chain_sum(M, x, rc, rv, rtol, cap):
    """Sum over m >= 2 and both branches l of rho^(z)/|DT^m(z)|,
    z = T_l^-1 T_2^-1 T_1^-(m-2) x.  Returns (sum, depth, converged)."""
    total = 0.0
    y = x
    jac = 1.0
    for m in range(2, cap + 1):
        if m > 2:
            y = _mk.invert(M, _mk.LEFT, y, 1e-15)[0]
            jac *= _mk.t_deriv(M, y)
        w, dw = _mk.invert(M, _mk.RIGHT, y, 1e-15)
        dtw = abs(_mk.branch_der(M, _mk.RIGHT, w, dw))
        s = 0.0
        for br in (_mk.LEFT, _mk.RIGHT):
            z, dz = _mk.invert(M, br, w, 1e-15)
            dtz = abs(_mk.branch_der(M, br, z, dz))
            if math.isfinite(dtz):
                s += np.interp(z, rc, rv) / dtz
        term = s / (dtw * jac)
        total += term
        if total > 0 and term < rtol * total:
            return total, m, True
    return total, cap, False


@nb.njit(cache=True, nogil=True)
def _two_term(M, x, rc, rv):
    s = 0.0
    for br in (_mk.LEFT, _mk.RIGHT):
        z, dz = _mk.invert(M, br, x, 1e-15)
        dtz = abs(_mk.branch_der(M, br, z, dz))
        if math.isfinite(dtz):
            s += np.interp(z, rc, rv) / dtz
    return s


@nb.njit(cache=True, nogil=True)
def _reconstruct(M, xs, rc, rv, a0p, a0, rtol, cap, out, depth):
    ok = True
    for i in range(xs.shape[0]):
        x = xs[i]
        if x <= 0.0 or x >= 1.0:
            out[i] = 0.0
            depth[i] = 0
        elif x < a0p:
            v, d, conv = _chain_sum(M, x, rc, rv, rtol, cap)
            out[i] = v
            depth[i] = d
            ok = ok and conv
        elif x > a0:
            out[i] = _two_term(M, x, rc, rv)
            depth[i] = 1
        else:
            out[i] = np.interp(x, rc, rv)
            depth[i] = 0
    return ok


@dataclass
class Reconstruction:
    """Global density rebuilt from the induced density on I."""

    estimate: DensityEstimate
    C_r: float
    rho_hat: DensityEstimate
    partition: CylinderPartition
    cylinder_mass: np.ndarray
    raw_mass: float
    tmap: IntervalMap = field(repr=False)
    rtol: float = 1e-12
    cap: int = 200

    def value(self, x, normalized: bool = True) -> np.ndarray:
        """Pointwise reconstructed density (optionally before renormalization)."""
        xs = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)))
        out = np.empty_like(xs)
        depth = np.empty(len(xs), dtype=np.int64)
        lat = self.partition.lattice
        _reconstruct(self.tmap.kernel, xs, self.rho_hat.grid.centers, self.rho_hat.values,
                     lat.a0_prime, lat.a0, self.rtol, self.cap, out, depth)
        out *= self.C_r
        if normalized:
            out /= self.raw_mass
        return out

    def kac_sum(self) -> float:
        """sum_p p mu_I(Z_p), which equals 1/mu(I)."""
        p = np.arange(1, len(self.cylinder_mass) + 1)
        return float(np.sum(p * self.cylinder_mass))


def cylinder_masses(rho_hat: DensityEstimate, part: CylinderPartition) -> np.ndarray:
    """mu_I(Z_p) for p = 1..depth, with the uncovered cusp gap lumped into depth+1."""
    mass = np.zeros(part.depth + 1)
    for c in part.cylinders:
        mass[c.p - 1] += float(rho_hat.integrate(c.left, c.right))
    g = part.gap
    mass[part.depth] = float(rho_hat.integrate(g[0], g[1]))
    return mass


def pianigiani_reconstruct(tmap: IntervalMap, rho_hat: DensityEstimate, grid: Grid,
                           depth: int = 60, rtol: float = 1e-12, cap: int = 200,
                           lattice: PreimageLattice | None = None) -> Reconstruction:
    """Global invariant density from the induced density on I.

    rho = C_r rho^ on I, the two-branch transfer formula on (a0, 1) and the
    chain sum over T_l^-1 T_2^-1 T_1^-(m-2) on (0, a0'); C_r solves
    1 = C_r sum_i tau_i mu_I(Z_i).  The result is renormalized on ``grid``;
    the mass before renormalization is kept as a diagnostic.
    """
    if grid.n_bins < 2 ** 9 or rho_hat.grid.n_bins < 2 ** 9:
        raise PreconditionError("reconstruction needs grids of at least 2^9 bins")
    if abs(rho_hat.mass - 1.0) > 1e-6:
        raise PreconditionError("rho_hat must be normalized on I")
    lat = lattice if lattice is not None else build_lattice(tmap, depth)
    part = build_cylinders(lat, depth)
    cmass = cylinder_masses(rho_hat, part)
    p = np.arange(1, len(cmass) + 1)
    C_r = 1.0 / float(np.sum(p * cmass))
    xs = np.ascontiguousarray(grid.centers)
    out = np.empty_like(xs)
    dep = np.empty(len(xs), dtype=np.int64)
    ok = _reconstruct(tmap.kernel, xs, rho_hat.grid.centers, rho_hat.values, lat.a0_prime,
                      lat.a0, rtol, cap, out, dep)
    if not ok:
        raise TruncationError(f"chain sum did not reach relative tail {rtol} within {cap} terms")
    out *= C_r
    raw = float(out.sum() * grid.width)
    est = DensityEstimate(grid, out / raw, "reconstruction", int(rho_hat.count),
                          {"C_r": C_r, "raw_mass": raw, "max_chain_depth": int(dep.max())})
    return Reconstruction(est, C_r, rho_hat, part, cmass, raw, tmap, rtol, cap)
