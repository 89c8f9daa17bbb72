"""End-to-end run on the classical attractor compared against the published constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cuspmap import CuspMap, Lemma1Report, build_empirical, check_lemma1, p_star
from .density import DensityEstimate, FitResult, Grid, fit_ansatz, ulam_density
from .flow import DEFAULT_TOL, FlowParams, PerturbationSpec, initial_condition
from .inducing import ReturnTimeStats, return_time_stats, total_variation
from .section import MaximaSeries, NormalizedPairs, collect_maxima, normalize, winding_counts

# published fits on about 1e5 maxima
PUBLISHED = {"alpha_prime": 1.113, "alpha": 0.4603, "B_prime": 0.3095, "B": 0.2856,
         "delta": 2.2258, "gamma": 4.26, "mean_gap": 0.66}
ALPHA_DD = 1.01


@dataclass
class Row:
    quantity: str
    published: float | None
    measured: float
    tol: float | None
    passed: bool | None

    def cells(self) -> list[str]:
        def fmt(v):
            if v is None:
                return "-"
            if isinstance(v, bool):
                return str(v)
            return f"{v:.6g}"
        ok = "-" if self.passed is None else ("PASS" if self.passed else "FAIL")
        return [self.quantity, fmt(self.published), fmt(self.measured), fmt(self.tol), ok]


def _abs_row(name, published, measured, tol):
    return Row(name, published, float(measured), tol, bool(abs(measured - published) <= tol))


@dataclass
class Reproduction:
    series: MaximaSeries
    pairs: NormalizedPairs
    tmap: CuspMap
    density: DensityEstimate
    fit: FitResult
    lemma1: Lemma1Report
    p_star_published: int
    returns_I: ReturnTimeStats
    returns_right: ReturnTimeStats
    windings: np.ndarray
    rows: list = field(default_factory=list)

    @property
    def exponents(self):
        return self.tmap.exponents

    @property
    def predicted_tail_slope(self) -> float:
        e = self.exponents
        return -math.log(e.alpha_prime) / e.B_star

    @property
    def winding_tv(self) -> float:
        return total_variation(self.windings, self.returns_right.taus)

    def table(self) -> str:
        head = ["quantity", "published", "measured", "tol", "pass"]
        cells = [head] + [r.cells() for r in self.rows]
        w = [max(len(c[i]) for c in cells) for i in range(len(head))]
        lines = ["  ".join(c[i].ljust(w[i]) for i in range(len(head))) for c in cells]
        lines.insert(1, "  ".join("-" * x for x in w))
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {"rows": [{"quantity": r.quantity, "published": r.published, "measured": r.measured,
                          "tol": r.tol, "pass": r.passed} for r in self.rows],
                "exponents": self.exponents.as_dict(), "x0": self.tmap.x0,
                "fit": self.fit.as_dict(), "lemma1": self.lemma1.as_dict(),
                "tail_window": list(self.returns_I.tail_window),
                "n_events": len(self.series)}


def build_rows(r: Reproduction) -> list[Row]:
    e = r.exponents
    rows = [_abs_row("alpha_prime", PUBLISHED["alpha_prime"], e.alpha_prime, 0.05),
            _abs_row("alpha", PUBLISHED["alpha"], e.alpha, 0.05),
            _abs_row("B_prime", PUBLISHED["B_prime"], e.B_prime, 0.05),
            _abs_row("B", PUBLISHED["B"], e.B, 0.05),
            _abs_row("delta", PUBLISHED["delta"], r.fit.delta, 0.15),
            _abs_row("gamma", PUBLISHED["gamma"], r.fit.gamma, 0.5)]
    gap = r.fit.delta - (1.0 / e.B_star - 1.0)
    rows.append(Row("delta-(1/B*-1)", 0.0, gap, 0.2, bool(abs(gap) <= 0.2)))
    mg = r.series.mean_gap()
    rows.append(_abs_row("mean_gap", PUBLISHED["mean_gap"], mg, 0.05))
    rows.append(Row("shortest_period=2*gap", 2 * PUBLISHED["mean_gap"], 2 * mg, None, None))
    ps = r.p_star_published
    rows.append(Row("p_star(published constants)", 8, ps, 0, ps == 8))
    rows.append(Row("p_star(fitted map)", None, r.lemma1.p_star, None, None))
    rows.append(Row("lemma1(i)-(iii) on fitted map", None, float(r.lemma1.passed), None,
                    r.lemma1.passed))
    pred = r.predicted_tail_slope
    slope = r.returns_I.tail_slope
    pub_slope = -math.log(PUBLISHED["alpha_prime"]) / PUBLISHED["B_prime"]
    rows.append(Row("tail_slope(I)", pub_slope, slope,
                    0.2 * abs(pred), bool(abs(slope - pred) <= 0.2 * abs(pred))))
    tv = r.winding_tv
    rows.append(Row("TV(winding, tau_right)", 0.0, tv, 0.03, bool(tv < 0.03)))
    return rows


def reproduce(n_events: int = 100_000, seed: int = 0, tol: float = DEFAULT_TOL,
              n_bins: int = 4096, n_return_samples: int = 100_000,
              params: FlowParams | None = None, u0=None) -> Reproduction:
    """Flow -> maxima -> map -> exponents, density fit, Lemma 1, return times."""
    p = params or FlowParams.classical()
    start = initial_condition(seed) if u0 is None else np.asarray(u0, dtype=float)
    series = collect_maxima(p, PerturbationSpec.none(), start, n_events, tol).series
    pairs = normalize(series)
    tmap = build_empirical(pairs)
    e = tmap.exponents
    ps_fit = p_star(ALPHA_DD, e.alpha, e.alpha_prime)
    ps_published = p_star(ALPHA_DD, PUBLISHED["alpha"], PUBLISHED["alpha_prime"])
    lemma = check_lemma1(tmap, ALPHA_DD, p_max=max(ps_fit, ps_published))
    rho = ulam_density(tmap, Grid(n_bins))
    fit = fit_ansatz(rho)
    rt_i = return_time_stats(tmap, n_return_samples, "I", seed=seed)
    rt_r = return_time_stats(tmap, n_return_samples, "right_half", seed=seed)
    wind = winding_counts(series, "both")
    out = Reproduction(series, pairs, tmap, rho, fit, lemma, ps_published, rt_i, rt_r, wind)
    out.rows = build_rows(out)
    return out
