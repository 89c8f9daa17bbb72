"""Acceptance criteria 1-9, one test and one PASS/FAIL line each."""

import math

import numpy as np
import pytest
from scipy import integrate as quad_mod

from lorenz_cusp.cuspmap import PUBLISHED_EXPONENTS, build_empirical, build_lattice, sup_distance
from lorenz_cusp.density import (DensityEstimate, Grid, ansatz, cusp_continuity,
                                 histogram_density, l1_distance, pf_iterate, pf_residual,
                                 ulam_density)
from lorenz_cusp.flow import (FlowParams, PerturbationSpec, apply_involution, casimir,
                              conservative_field, hamiltonian, integrate, shifted_field)
from lorenz_cusp.inducing import build_cylinders, first_return_map
from lorenz_cusp.stability import Budget, compare_lobes, stability_sweep

N_BINS = 2 ** 12
RESULTS: dict[int, str] = {}


class Criterion:
    """Collects named checks and reports them on one line."""

    def __init__(self, number: int, title: str):
        self.number, self.title, self.checks = number, title, []

    def check(self, name: str, ok, detail: str) -> None:
        self.checks.append((name, bool(ok), detail))

    def finish(self) -> None:
        ok = all(c[1] for c in self.checks)
        failed = [c[0] for c in self.checks if not c[1]]
        body = "; ".join(f"{n} {d}" for n, _, d in self.checks)
        line = f"criterion {self.number} {'PASS' if ok else 'FAIL'} [{self.title}] {body}"
        if failed:
            line += f" | failing: {', '.join(failed)}"
        RESULTS[self.number] = line
        print(line)
        assert ok, line


def within(c: Criterion, name: str, got: float, want: float, tol: float) -> None:
    c.check(name, abs(got - want) <= tol, f"{got:.4f} (target {want} +/- {tol:g})")


def test_criterion_1_published_constants(reproduction):
    c = Criterion(1, "exponents from ~1e5 Casimir maxima")
    e = reproduction.exponents
    c.check("n_events", len(reproduction.series) >= 100_000, str(len(reproduction.series)))
    within(c, "alpha'", e.alpha_prime, 1.113, 0.05)
    within(c, "alpha", e.alpha, 0.4603, 0.05)
    within(c, "B'", e.B_prime, 0.3095, 0.05)
    within(c, "B", e.B, 0.2856, 0.05)
    c.finish()


def test_criterion_2_density_fit(reproduction):
    c = Criterion(2, "density fit on the Lorenz pipeline")
    fit = reproduction.fit
    within(c, "delta", fit.delta, 2.2258, 0.15)
    within(c, "gamma", fit.gamma, 4.26, 0.5)
    target = 1.0 / reproduction.exponents.B_star - 1.0
    c.check("delta vs 1/B*-1", abs(fit.delta - target) <= 0.2,
            f"{fit.delta:.4f} vs {target:.4f} (tol 0.2)")
    c.finish()


def test_criterion_3_mean_gap(reproduction):
    c = Criterion(3, "mean inter-maximum time")
    s = reproduction.series
    c.check("n_events", len(s) >= 10_000, str(len(s)))
    mg = s.mean_gap()
    within(c, "mean_gap", mg, 0.66, 0.05)
    c.check("shortest_period", math.isfinite(2 * mg), f"2*gap = {2 * mg:.4f} (reported)")
    c.finish()


def test_criterion_4_lemma1(reproduction):
    c = Criterion(4, "Lemma 1 with alpha''=1.01")
    ps = reproduction.p_star_published
    c.check("p_star", ps == 8, f"{ps} (target 8)")
    lem = reproduction.lemma1
    c.check("conditions (i)-(iii)", lem.passed, f"passed={lem.passed} on fitted map")
    c.finish()


def test_criterion_5_return_times(reproduction):
    c = Criterion(5, "return-time tail and winding counts")
    rt = reproduction.returns_I
    c.check("samples", len(rt.taus) >= 100_000, str(len(rt.taus)))
    pred = reproduction.predicted_tail_slope
    c.check("tail slope", abs(rt.tail_slope - pred) <= 0.2 * abs(pred),
            f"{rt.tail_slope:.4f} vs -log(a')/B* = {pred:.4f} (+/-20%)")
    tv = reproduction.winding_tv
    c.check("TV(windings, tau)", tv < 0.03, f"{tv:.4f} (< 0.03)")
    c.finish()


def test_criterion_6_density_properties(analytic_map):
    c = Criterion(6, "density properties on the analytic family")
    T = analytic_map
    grid = Grid(N_BINS)
    ulam = ulam_density(T, grid)
    hist = histogram_density(T, 10_000_000, grid, seed=0)
    pf = pf_iterate(T, DensityEstimate(grid, np.ones(N_BINS), "analytic"), n_steps=1000)
    d = max(l1_distance(ulam, hist), l1_distance(ulam, pf), l1_distance(hist, pf))
    c.check("pairwise L1", d < 0.05, f"max {d:.4f} (< 0.05)")
    r = pf_residual(T, pf)
    c.check("PF residual", r < 1e-6, f"{r:.2e} (< 1e-6)")
    edge = []
    for n in (2 ** 10, 2 ** 12, 2 ** 14):
        est = pf_iterate(T, DensityEstimate(Grid(n), np.ones(n), "analytic"))
        edge.append(max(est.values[0], est.values[-1]))
    c.check("boundary -> 0", edge[0] > edge[1] > edge[2] and edge[2] < 1e-6,
            "edge values " + ", ".join(f"{v:.1e}" for v in edge))
    gap = cusp_continuity(T, pf)["gap"]
    c.check("continuity at x0", gap < 1e-3, f"{gap:.2e} (< 1e-3)")
    worst = 0.0
    for g, dl in [(4.26, 2.2258), (0.5, 0.3), (9.0, 4.5), (2.0, 1.0)]:
        val, _ = quad_mod.quad(lambda x: ansatz(x, g, dl), 0, 1, epsabs=1e-13, epsrel=1e-12,
                               limit=200)
        worst = max(worst, abs(val - 1.0))
    c.check("Bessel normalization", worst < 1e-8, f"{worst:.1e} (< 1e-8)")
    c.finish()


def test_criterion_7_analytic_oracles(analytic_map):
    c = Criterion(7, "oracle equivalence on the analytic family")
    T = analytic_map
    x = T.orbit(0.123456, 200_000)[1000:]
    rebuilt = build_empirical((x[:-1], x[1:]))
    worst = max(abs(getattr(rebuilt.exponents, k) - getattr(PUBLISHED_EXPONENTS, k))
                for k in ("alpha_prime", "alpha", "B_prime", "B"))
    c.check("exponent round trip", worst <= 0.02, f"max error {worst:.4f} (<= 0.02)")
    c.check("map round trip", sup_distance(T, rebuilt) < 1e-3,
            f"sup {sup_distance(T, rebuilt):.1e}")
    grid = Grid(N_BINS)
    d = l1_distance(ulam_density(T, grid), histogram_density(T, 10_000_000, grid, seed=0))
    c.check("Ulam vs histogram", d < 0.05, f"L1 {d:.4f} (< 0.05)")
    part = build_cylinders(build_lattice(T, 60), 60)
    mismatches, checked = 0, 0
    for cyl in part.cylinders:
        if cyl.p > 8:
            continue
        for f in (0.1, 0.3, 0.5, 0.7, 0.9):
            _, tau = first_return_map(T, "I", cyl.left + f * cyl.width)
            mismatches += tau != cyl.p
            checked += 1
    c.check("first return = cylinder index", mismatches == 0,
            f"{mismatches} mismatches in {checked} points, depth <= 8")
    c.finish()


def test_criterion_8_statistical_stability(classical, tmp_path):
    c = Criterion(8, "statistical stability")
    sw = stability_sweep(classical, PerturbationSpec.axial(0.5), [0.5, 0.25, 0.1, 0.05],
                         Budget(), seed=0, threads=4, out=tmp_path)
    devs = ", ".join(f"{e:g}:{d:.4f}" for e, d in zip(sw.epsilons, sw.deviations))
    c.check("sweep complete", sw.complete,
            "all points ran" if sw.complete else f"failed at {sorted(sw.failures)}")
    c.check("decreasing within noise", sw.monotone_within_noise(),
            f"[{devs}] noise {sw.noise_floor:.4f}")
    c.check("smallest eps <= 2x noise", sw.final_within(2.0),
            f"{sw.deviations[-1]:.4f} vs 2x{sw.noise_floor:.4f}")
    lobes = compare_lobes(classical, PerturbationSpec.planar(2.5, math.radians(70)), Budget())
    valid = not lobes.plus.tmap.exponents.problems() and not lobes.minus.tmap.exponents.problems()
    c.check("T+ and T- valid", valid, "both exponent sets in class")
    c.check("T+ != T-", lobes.maps_differ,
            f"sup {lobes.sup_difference:.4f} vs null {lobes.null_sup_difference:.4f}")
    c.check("R-symmetry broken", lobes.symmetry_broken,
            f"KS {lobes.ks:.4f} vs null {lobes.null_ks:.4f}")
    c.finish()


def test_criterion_9_flow(classical):
    c = Criterion(9, "flow correctness")
    tol = 1e-10
    none = PerturbationSpec.none()
    res = max(np.abs(shifted_field(classical, none, fp)).max()
              for fp in (classical.c0(), classical.c1(), classical.c2()))
    drift = max(np.abs(integrate(classical, none, fp, 20.0, tol).states - fp).max()
                for fp in (classical.c1(), classical.c2()))
    c.check("equilibria", res < tol and drift < tol, f"|f| {res:.1e}, drift {drift:.1e}")
    u0 = np.array([1.0, 1.0, -20.0])
    a = integrate(classical, none, u0, 10.0, tol)
    b = integrate(classical, none, apply_involution(u0), 10.0, tol)
    ts = np.linspace(0, 10, 201)
    eq = np.abs(np.array([apply_involution(x) for x in a(ts)]) - b(ts)).max()
    c.check("R-equivariance", eq < 10 * tol, f"{eq:.1e} (< {10 * tol:g})")
    rng = np.random.default_rng(0)
    worst, h = 0.0, 1e-4
    for u in rng.uniform(-50, 50, (50, 3)):
        div = sum((conservative_field(classical, u + h * e)[i]
                   - conservative_field(classical, u - h * e)[i]) / (2 * h)
                  for i, e in enumerate(np.eye(3)))
        worst = max(worst, abs(div) / max(1.0, np.abs(u).max()))
    c.check("div of Hamiltonian part", worst < 1e-10, f"{worst:.1e} (< 1e-10)")
    tr = integrate(classical, none, u0, 20.0, 1e-12, conservative=True)
    cs = np.array([casimir(x) for x in tr.states])
    hs = np.array([hamiltonian(classical, x) for x in tr.states])
    rate = max(np.abs(cs - cs[0]).max(), np.abs(hs - hs[0]).max()) / tr.t_end
    c.check("first-integral drift", rate < 1e-8, f"{rate:.1e} per unit time (< 1e-8)")
    c.finish()
