"""Perturbed pipelines, the assumptions on perturbed maps and L1 stability sweeps."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import runs
from .cuspmap import (CuspMap, IntervalMap, build_empirical, build_lattice,
                      min_abs_derivative, sup_distance)
from .density import DensityEstimate, l1_distance, ulam_density, unit_grid
from .errors import LorenzCuspError, NumericError, PipelineError, PreconditionError
from .flow import DEFAULT_TOL, FlowParams, PerturbationSpec, initial_condition
from .section import (MaximaSeries, NormalizedPairs, collect_maxima, ks_lobes, normalize)

log = logging.getLogger(__name__)

CUSP_EXCLUDE = 1e-3
N_DERIV_SAMPLES = 1000
CUSP_RATIO_K = tuple(range(4, 21))
HOLDER_K = tuple(range(6, 15))
HOLDER_MARGIN = 1e-2


@dataclass(frozen=True)
class Budget:
    """Sample budget shared by every run of a sweep."""

    n_events: int = 100_000
    tol: float = DEFAULT_TOL
    n_bins: int = 512
    knots: int = 64
    mc_per_bin: int = 256

    def scaled(self, factor: float) -> "Budget":
        return Budget(int(self.n_events * factor), self.tol, self.n_bins, self.knots,
                      self.mc_per_bin)

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- assumptions


@dataclass
class AssumptionReport:
    """Numerical proxies for Assumptions B-D comparing T_eps with T."""

    c0_distance: float
    derivative_gap_max: float
    derivative_gap_median: float
    cusp_k: np.ndarray
    cusp_ratio_left: np.ndarray
    cusp_ratio_right: np.ndarray
    holder: dict
    d10: float
    d10_eps: float
    exponent_problems: list = field(default_factory=list)

    @property
    def in_class(self) -> bool:
        """T_eps germs lie in the admissible exponent ranges."""
        return not self.exponent_problems

    @property
    def d10_gap(self) -> float:
        return abs(self.d10 - self.d10_eps)

    @property
    def assumption_d(self) -> bool:
        return bool(self.d10_eps > 1.0)

    @property
    def finite(self) -> bool:
        vals = [self.c0_distance, self.derivative_gap_max, self.derivative_gap_median,
                self.d10, self.d10_eps, *self.cusp_ratio_left, *self.cusp_ratio_right]
        vals += [v for pair in self.holder.values() for v in pair]
        return bool(np.all(np.isfinite(vals)))

    @property
    def passed(self) -> bool:
        return self.finite and self.assumption_d and self.in_class

    def as_dict(self) -> dict:
        return {"c0_distance": self.c0_distance,
                "derivative_gap_max": self.derivative_gap_max,
                "derivative_gap_median": self.derivative_gap_median,
                "cusp_k": np.asarray(self.cusp_k).tolist(),
                "cusp_ratio_left": np.asarray(self.cusp_ratio_left).tolist(),
                "cusp_ratio_right": np.asarray(self.cusp_ratio_right).tolist(),
                "holder": {k: list(v) for k, v in self.holder.items()},
                "d10": self.d10, "d10_eps": self.d10_eps, "d10_gap": self.d10_gap,
                "assumption_d": self.assumption_d, "finite": self.finite,
                "exponent_problems": list(self.exponent_problems),
                "in_class": self.in_class, "passed": self.passed}


def _derivative_points(a: IntervalMap, b: IntervalMap, n: int, seed: int = 0) -> np.ndarray:
    """``n`` sample points away from both cusps and the interval ends."""
    rng = np.random.default_rng(seed)
    out = np.empty(0)
    while len(out) < n:
        x = rng.uniform(CUSP_EXCLUDE, 1.0 - CUSP_EXCLUDE, 2 * n)
        x = x[(np.abs(x - a.x0) > CUSP_EXCLUDE) & (np.abs(x - b.x0) > CUSP_EXCLUDE)]
        out = np.concatenate((out, x))
    return out[:n]


def holder_proxy(tmap: IntervalMap, k_range=HOLDER_K, margin: float = HOLDER_MARGIN,
                 n_grid: int = 4001) -> tuple[float, float]:
    """(C_h, iota) from the modulus of continuity of DT on both branches.

    omega(h) = max |DT(x+h) - DT(x)| over compact pieces of each branch that
    stay ``margin`` away from 0, x0 and 1; log omega is fitted linearly in
    log h for h = 2^-k.
    """
    pieces = [(margin, tmap.x0 - margin), (tmap.x0 + margin, 1.0 - margin)]
    hs = np.array([2.0 ** -k for k in k_range])
    omega = np.zeros(len(hs))
    for lo, hi in pieces:
        for i, h in enumerate(hs):
            xs = np.linspace(lo, hi - h, n_grid)
            diff = np.abs(tmap.deriv(xs + h) - tmap.deriv(xs))
            omega[i] = max(omega[i], float(diff.max()))
    iota, logc = np.polyfit(np.log(hs), np.log(omega), 1)
    return float(math.exp(logc)), float(iota)


def _d10(tmap: IntervalMap) -> float:
    lat = build_lattice(tmap, 3)
    return min_abs_derivative(tmap, float(lat.b[1]), lat.a0)[0]


def check_assumptions(T: IntervalMap, T_eps: IntervalMap) -> AssumptionReport:
    """Compare a perturbed map with the unperturbed one.

    Report-only: Assumption D (d_(eps,1,0) > 1) is exposed as
    :attr:`AssumptionReport.assumption_d` and enforced by the pipeline.
    """
    c0 = sup_distance(T, T_eps, 10_000, CUSP_EXCLUDE)
    xs = _derivative_points(T, T_eps, N_DERIV_SAMPLES)
    dt, dte = T.deriv(xs), T_eps.deriv(xs)
    gap = np.abs(dte - dt)
    ks = np.array(CUSP_RATIO_K)
    def ratio(side):
        return np.array([T_eps.deriv_at_distance(side, 2.0 ** -k)
                         / T.deriv_at_distance(side, 2.0 ** -k) for k in ks])

    rl, rr = ratio("left"), ratio("right")
    holder = {"T": holder_proxy(T), "T_eps": holder_proxy(T_eps)}
    return AssumptionReport(c0, float(gap.max()), float(np.median(gap / np.abs(dt))), ks, rl, rr,
                            holder, _d10(T), _d10(T_eps), _exponent_problems(T_eps))


def _exponent_problems(tmap: IntervalMap) -> list:
    e = getattr(tmap, "exponents", None)
    return [] if e is None else e.problems()


# ---------------------------------------------------------------- pipeline


@dataclass
class PerturbedPipelineResult:
    """Flow -> maxima -> map -> density under one forcing."""

    pert: PerturbationSpec
    lobe: str
    seed: int
    budget: Budget
    n_events: int
    mean_gap: float
    z_range: tuple
    ks_lobes: float
    tmap: CuspMap
    density: DensityEstimate
    report: AssumptionReport | None = None
    l1_deviation: float | None = None
    pairs: NormalizedPairs | None = field(default=None, repr=False)

    @property
    def exponents(self):
        return self.tmap.exponents

    def config(self) -> dict:
        return {"pert": self.pert.as_dict(), "lobe": self.lobe, "seed": self.seed,
                "budget": self.budget.as_dict()}

    def summary(self) -> dict:
        out = {"n_events": self.n_events, "mean_gap": self.mean_gap,
               "z_range": list(self.z_range), "ks_lobes": self.ks_lobes,
               "x0": self.tmap.x0, "exponents": self.exponents.as_dict(),
               "l1_deviation": self.l1_deviation}
        if self.report is not None:
            out["assumptions"] = self.report.as_dict()
        return out

    def write(self, base, name: str = "pipeline") -> Path:
        """Store map, density and manifest under a content-addressed directory."""
        d = runs.run_dir(base, name, self.config())
        self.tmap.to_json(d / "map.json")
        self.density.to_csv(d / "density.csv")
        runs.write_manifest(d, "stability-pipeline", self.config(),
                            {"map": "map.json", "density": "density.csv"},
                            summary=self.summary())
        return d


def _collect(p: FlowParams, pert: PerturbationSpec, budget: Budget, seed: int) -> MaximaSeries:
    return collect_maxima(p, pert, initial_condition(seed), budget.n_events, budget.tol).series


def run_perturbed_pipeline(p: FlowParams, pert: PerturbationSpec, lobe: str = "all",
                           budget: Budget | None = None, seed: int = 0,
                           reference: PerturbedPipelineResult | None = None,
                           series: MaximaSeries | None = None) -> PerturbedPipelineResult:
    """Run the full chain under ``pert``.

    ``lobe`` selects the pairs starting on Sigma_+ or Sigma_- (T_eps^+ or
    T_eps^-) or all of them.  With a ``reference`` result the assumptions are
    checked against its map and the L1 deviation of the densities is
    recorded; a violated Assumption D aborts before the comparison.
    A precomputed ``series`` skips the integration.
    """
    budget = budget or Budget()
    if lobe not in ("all", "plus", "minus"):
        raise PreconditionError(f"lobe must be all, plus or minus, got {lobe!r}")
    stage = "flow"
    try:
        if series is None:
            series = _collect(p, pert, budget, seed)
        stage = "normalize"
        pairs = normalize(series, lobe)
        stage = "build-map"
        tmap = build_empirical(pairs, budget.knots)
        stage = "density"
        rho = ulam_density(tmap, unit_grid(budget.n_bins), budget.mc_per_bin)
        ks = ks_lobes(series)
        report = dev = None
        if reference is not None:
            stage = "assumptions"
            report = check_assumptions(reference.tmap, tmap)
    except (NumericError, PreconditionError) as exc:
        raise PipelineError(stage, exc) from exc
    if report is not None:
        if not report.assumption_d:
            raise PipelineError("assumption-D", f"d_(eps,1,0) = {report.d10_eps:.4f} <= 1; "
                                "the stability hypothesis fails for this map")
        dev = l1_distance(reference.density, rho)
    return PerturbedPipelineResult(pert, lobe, int(seed), budget, len(series),
                                   series.mean_gap(), (series.z_min, series.z_max), ks, tmap,
                                   rho, report, dev, pairs)


# ---------------------------------------------------------------- sweep


@dataclass
class SweepResult:
    """L1 deviations of perturbed densities against a fixed reference."""

    epsilons: np.ndarray
    deviations: np.ndarray
    noise_floor: float
    failures: dict
    results: dict = field(repr=False)
    reference: PerturbedPipelineResult = field(repr=False)

    def rows(self) -> list[tuple]:
        return [(float(e), float(d), self.noise_floor)
                for e, d in zip(self.epsilons, self.deviations)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epsilon", "l1_deviation", "noise_floor"])
            for e, d, n in self.rows():
                wr.writerow([repr(e), repr(d), repr(n)])

    @property
    def complete(self) -> bool:
        return not self.failures

    def monotone_within_noise(self, band: float | None = None) -> bool:
        """Deviations never grow by more than ``band`` (default: the noise floor)
        as epsilon decreases; False if any point failed."""
        if self.failures:
            return False
        band = self.noise_floor if band is None else band
        d = self.deviations
        return bool(np.all(np.diff(d) <= band))

    def final_within(self, factor: float = 2.0) -> bool:
        d = self.deviations[-1]
        return bool(np.isfinite(d) and d <= factor * self.noise_floor)

    def as_dict(self) -> dict:
        return {"epsilons": self.epsilons.tolist(), "deviations": self.deviations.tolist(),
                "noise_floor": self.noise_floor,
                "failures": {repr(float(k)): v for k, v in self.failures.items()},
                "assumptions": {repr(float(k)): {"passed": r.report.passed,
                                                 "in_class": r.report.in_class,
                                                 "d10_eps": r.report.d10_eps}
                                for k, r in self.results.items()},
                "monotone_within_noise": self.monotone_within_noise(),
                "final_within_2x_noise": self.final_within(2.0)}


def stability_sweep(p: FlowParams, family: PerturbationSpec, epsilons, budget: Budget | None = None,
                    seed: int = 0, threads: int = 1, out: str | Path | None = None
                    ) -> SweepResult:
    """Deviation curve eps -> ||rho - rho_eps||_1 with a noise floor.

    The reference is the unperturbed pipeline at ``seed``.  Every eps run and
    a second unperturbed run use ``seed + 1``, so the noise floor is the
    deviation of an eps = 0 point by construction.  Failed points are kept
    with a NaN deviation and the failing stage.
    """
    budget = budget or Budget()
    eps = np.asarray(epsilons, dtype=float)
    if len(eps) < 4:
        raise PreconditionError("a sweep needs at least 4 epsilon values")
    if np.any(np.diff(eps) >= 0) or np.any(eps < 0):
        raise PreconditionError("epsilon grid must be non-negative and strictly decreasing")
    none = PerturbationSpec.none()
    ref = run_perturbed_pipeline(p, none, "all", budget, seed)
    noise = run_perturbed_pipeline(p, none, "all", budget, seed + 1, reference=ref)

    def job(e):
        try:
            return e, run_perturbed_pipeline(p, family.with_epsilon(e), "all", budget, seed + 1,
                                             reference=ref), None
        except PipelineError as exc:
            log.warning("sweep point eps=%g failed: %s", e, exc)
            return e, None, {"stage": exc.stage, "error": str(exc.cause)}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            done = list(ex.map(job, eps))
    else:
        done = [job(e) for e in eps]
    results = {float(e): r for e, r, _ in done if r is not None}
    failures = {float(e): f for e, _, f in done if f is not None}
    dev = np.array([results[float(e)].l1_deviation if float(e) in results else np.nan
                    for e in eps])
    sweep = SweepResult(eps, dev, float(noise.l1_deviation), failures, results, ref)
    if out is not None:
        _write_sweep(sweep, p, family, budget, seed, Path(out))
    return sweep


def _write_sweep(sweep: SweepResult, p, family, budget, seed, base: Path) -> Path:
    cfg = {"flow": p.as_dict(), "family": family.as_dict(), "epsilons": sweep.epsilons.tolist(),
           "budget": budget.as_dict(), "seed": seed}
    d = runs.run_dir(base, "sweep", cfg)
    sweep.to_csv(d / "sweep.csv")
    outputs = {"sweep": "sweep.csv", "reference": str(sweep.reference.write(d, "reference").name)}
    for e, r in sweep.results.items():
        outputs[f"eps={e!r}"] = str(r.write(d, "eps").name)
    runs.write_manifest(d, "stability-sweep", cfg, outputs, summary=sweep.as_dict())
    return d


def noise_floor(p: FlowParams, budget: Budget, seed: int = 0) -> float:
    """L1 distance between densities of two independent unperturbed runs."""
    none = PerturbationSpec.none()
    a = run_perturbed_pipeline(p, none, "all", budget, seed)
    b = run_perturbed_pipeline(p, none, "all", budget, seed + 1)
    return l1_distance(a.density, b.density)


# ---------------------------------------------------------------- symmetry and lobes


@dataclass
class LobeComparison:
    """T_eps^+ against T_eps^-, with the same statistic on the symmetric flow as null."""

    plus: PerturbedPipelineResult
    minus: PerturbedPipelineResult
    sup_difference: float
    null_sup_difference: float
    ks: float
    null_ks: float

    @property
    def maps_differ(self) -> bool:
        return self.sup_difference > 3.0 * self.null_sup_difference

    @property
    def symmetry_broken(self) -> bool:
        return self.ks > 5.0 * self.null_ks

    def as_dict(self) -> dict:
        return {"sup_difference": self.sup_difference,
                "null_sup_difference": self.null_sup_difference,
                "ks": self.ks, "null_ks": self.null_ks, "maps_differ": self.maps_differ,
                "symmetry_broken": self.symmetry_broken,
                "x0_plus": self.plus.tmap.x0, "x0_minus": self.minus.tmap.x0}


def lobe_maps(p: FlowParams, pert: PerturbationSpec, budget: Budget | None = None,
              seed: int = 0) -> tuple[PerturbedPipelineResult, PerturbedPipelineResult]:
    """T^+ and T^- from one orbit (pairs starting on Sigma_+ and Sigma_-)."""
    budget = budget or Budget()
    try:
        series = _collect(p, pert, budget, seed)
    except LorenzCuspError as exc:
        raise PipelineError("flow", exc) from exc
    return (run_perturbed_pipeline(p, pert, "plus", budget, seed, series=series),
            run_perturbed_pipeline(p, pert, "minus", budget, seed, series=series))


def compare_lobes(p: FlowParams, pert: PerturbationSpec, budget: Budget | None = None,
                  seed: int = 0) -> LobeComparison:
    """Distinctness of T_eps^+ and T_eps^- and the KS symmetry statistic.

    The null values come from the unperturbed flow at the same budget and
    seed, where R-symmetry makes both statistics pure estimation noise.
    """
    budget = budget or Budget()
    pl, mi = lobe_maps(p, pert, budget, seed)
    n_pl, n_mi = lobe_maps(p, PerturbationSpec.none(), budget, seed)
    return LobeComparison(pl, mi, sup_distance(pl.tmap, mi.tmap),
                          sup_distance(n_pl.tmap, n_mi.tmap), pl.ks_lobes, n_pl.ks_lobes)
