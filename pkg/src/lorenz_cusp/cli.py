"""Command-line pipeline: ``lorenz-cusp <command> [--config FILE] [--set sec.key=val]``.

Each command reads the artifacts of its upstream command from ``--out``,
writes its own artifacts there, and records a ``manifest-<command>.json``
holding the resolved config and digests of every input and output.  Passing
that manifest back through ``--config`` repeats the run exactly.

Exit codes: 0 ok, 2 config error, 3 missing upstream artifact, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import runs
from .config import RunConfig, schema_help
from .cuspmap import (PUBLISHED_EXPONENTS, CuspMap, build_analytic, build_empirical, build_lattice,
                      check_lemma1, fit_exponents, p_star)
from .density import (DensityEstimate, Grid, constants_relation, fit_ansatz,
                      histogram_density, pf_iterate, pf_residual, ulam_density)
from .errors import ConfigError, DependencyError, LorenzCuspError, NumericError
from .flow import FlowParams, PerturbationSpec, Trajectory, integrate, shifted_field
from .inducing import (build_cylinders, induced_density, pianigiani_reconstruct,
                       resolvable_depth, return_time_stats, total_variation)
from .section import MaximaSeries, NormalizedPairs, collect_maxima, extract_maxima, normalize, \
    winding_counts

log = logging.getLogger("lorenz_cusp")

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_NUMERIC = 0, 2, 3, 4

# artifact name -> command producing it
PRODUCER = {
    "trajectory.csv": "integrate",
    "maxima.csv": "extract-maxima",
    "pairs.csv": "build-map",
    "map.json": "build-map",
    "density.csv": "density",
}


# ---------------------------------------------------------------- helpers


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Context:
    """Resolved config plus bookkeeping of files read and written."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["run"]["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.summary: dict = {}

    def need(self, name: str) -> Path:
        path = self.out / name
        if not path.exists():
            raise DependencyError(str(path), PRODUCER[name])
        self.inputs[name] = _digest(path)
        return path

    def has(self, name: str) -> bool:
        return (self.out / name).exists()

    def path(self, name: str) -> Path:
        return self.out / name

    def wrote(self, name: str) -> None:
        self.outputs[name] = _digest(self.out / name)

    def write_json(self, name: str, obj) -> None:
        runs.write_json(self.out / name, obj)
        self.wrote(name)

    def finish(self) -> Path:
        return runs.write_manifest(self.out, self.command, self.cfg.as_dict(), self.outputs,
                                   self.inputs, self.summary,
                                   filename=f"manifest-{self.command}.json")


def _flow(cfg: RunConfig) -> tuple[FlowParams, PerturbationSpec]:
    f, pz = cfg["flow"], cfg["perturbation"]
    p = FlowParams(f["sigma"], f["rho"], f["beta"])
    pert = PerturbationSpec(pz["kind"], pz["epsilon"], math.radians(pz["theta_deg"]))
    return p, pert


def _u0(cfg: RunConfig) -> np.ndarray:
    f = cfg["flow"]
    u0 = np.array(f["u0"], dtype=float)
    if f["jitter"] > 0:
        u0 = u0 + f["jitter"] * np.random.default_rng(cfg["run"]["seed"]).standard_normal(3)
    return u0


def _load_map(ctx: Context) -> CuspMap:
    return CuspMap.from_json(ctx.need("map.json"))


def _print_kv(d: dict) -> None:
    for k, v in d.items():
        if isinstance(v, float):
            print(f"{k:>28s}: {v:.6g}")
        else:
            print(f"{k:>28s}: {v}")


# ---------------------------------------------------------------- commands


def cmd_integrate(ctx: Context) -> None:
    p, pert = _flow(ctx.cfg)
    f = ctx.cfg["flow"]
    traj = integrate(p, pert, _u0(ctx.cfg), f["t_end"], f["tol"])
    traj.to_csv(ctx.path("trajectory.csv"))
    ctx.wrote("trajectory.csv")
    ctx.summary = {"nodes": len(traj), "steps": traj.n_steps, "rejected": traj.n_rejected,
                   "t_end": traj.t_end}


def _read_trajectory(ctx: Context) -> Trajectory:
    data = np.loadtxt(ctx.need("trajectory.csv"), delimiter=",", skiprows=1, ndmin=2)
    p, pert = _flow(ctx.cfg)
    t, u = data[:, 0], np.ascontiguousarray(data[:, 1:4])
    fu = np.array([shifted_field(p, pert, x) for x in u])
    return Trajectory(t, u, fu, len(t) - 1, 0, p, pert, ctx.cfg["flow"]["tol"])


def cmd_extract_maxima(ctx: Context, stream: bool = False) -> None:
    f = ctx.cfg["flow"]
    if stream:
        p, pert = _flow(ctx.cfg)
        series = collect_maxima(p, pert, _u0(ctx.cfg), f["n_events"], f["tol"],
                                t_discard=f["transient"]).series
    else:
        series = extract_maxima(_read_trajectory(ctx), t_discard=f["transient"])
    series.to_csv(ctx.path("maxima.csv"))
    ctx.wrote("maxima.csv")
    ctx.summary = {"events": len(series), "mean_gap": series.mean_gap(),
                   "shortest_period": 2 * series.mean_gap(), "z_min": series.z_min,
                   "z_max": series.z_max}


def cmd_build_map(ctx: Context) -> None:
    m = ctx.cfg["map"]
    if m["kind"] == "analytic":
        tmap = build_analytic()
        ctx.summary = {"kind": "analytic"}
    else:
        series = MaximaSeries.from_csv(ctx.need("maxima.csv"))
        pairs = normalize(series, m["lobe"])
        pairs.to_csv(ctx.path("pairs.csv"))
        ctx.wrote("pairs.csv")
        tmap = build_empirical(pairs, m["knots"], m["cusp_bins"])
        tmap.diagnostics["z_range"] = [pairs.z_min, pairs.z_max]
        ctx.summary = {"kind": "empirical", "pairs": pairs.count}
    tmap.to_json(ctx.path("map.json"))
    ctx.wrote("map.json")
    ctx.summary.update({"x0": tmap.x0, **tmap.exponents.as_dict()})


def cmd_fit_exponents(ctx: Context) -> None:
    pairs = NormalizedPairs.from_csv(ctx.need("pairs.csv"))
    tmap = _load_map(ctx)
    exps, windows = fit_exponents(pairs.s, pairs.s_next, tmap.x0)
    ref = PUBLISHED_EXPONENTS.as_dict()
    rows = {k: {"fitted": v, "published": ref[k]} for k, v in exps.as_dict().items()
            if k in ("alpha_prime", "alpha", "B_prime", "B")}
    ctx.write_json("exponents.json", {"x0": tmap.x0, "exponents": exps.as_dict(),
                                      "windows": windows, "comparison": rows})
    ctx.summary = {k: v["fitted"] for k, v in rows.items()}


def cmd_lattice(ctx: Context) -> None:
    tmap = _load_map(ctx)
    lat = build_lattice(tmap, ctx.cfg["lattice"]["depth"])
    ctx.write_json("lattice.json", lat.as_dict())
    p = min(lat.depth - 1, 40)
    r = lat.ratios(max(1, p - 10), p)
    ctx.summary = {"a0": lat.a0, "a0_prime": lat.a0_prime, "depth": lat.depth,
                   "a_prime_ratio": float(np.mean(r["a_prime"])),
                   "slope_b": r["slope_b"], "slope_b_prime": r["slope_b_prime"]}


def cmd_check_lemma1(ctx: Context) -> None:
    tmap = _load_map(ctx)
    ad = ctx.cfg["lattice"]["alpha_dd"]
    e = PUBLISHED_EXPONENTS
    ps_published = p_star(ad, e.alpha, e.alpha_prime)
    rep = check_lemma1(tmap, ad, p_max=ps_published)
    out = rep.as_dict()
    out["p_star_published"] = ps_published
    ctx.write_json("lemma1.json", out)
    ctx.summary = {"d10": rep.d10, "check_i": rep.check_i, "check_ii": rep.check_ii,
                   "check_iii": rep.check_iii, "p_star": rep.p_star,
                   "p_star_published": ps_published}


def cmd_density(ctx: Context) -> None:
    d = ctx.cfg["density"]
    tmap = _load_map(ctx)
    grid = Grid(d["n_bins"])
    seed = ctx.cfg["run"]["seed"]
    if d["method"] == "ulam":
        est = ulam_density(tmap, grid, d["mc_per_bin"])
    elif d["method"] == "histogram":
        est = histogram_density(tmap, d["n_iters"], grid, seed=seed)
    else:
        est = pf_iterate(tmap, ulam_density(tmap, grid, d["mc_per_bin"]))
    est.to_csv(ctx.path("density.csv"))
    ctx.wrote("density.csv")
    ctx.summary = {"method": est.method, "bins": grid.n_bins, "mass": est.mass,
                   "argmax": est.argmax(), "pf_residual": pf_residual(tmap, est)}


def cmd_fit_density(ctx: Context) -> None:
    est = DensityEstimate.from_csv(ctx.need("density.csv"))
    fit = fit_ansatz(est, tuple(ctx.cfg["density"]["fit_window"]))
    out = fit.as_dict()
    if ctx.has("map.json"):
        exps = _load_map(ctx).exponents
        out["relation"] = constants_relation(fit, exps)
        out["delta_minus_inv_Bstar"] = fit.delta - (1.0 / exps.B_star - 1.0)
    ctx.write_json("density_fit.json", out)
    ctx.summary = {k: v for k, v in out.items() if not isinstance(v, (list, dict))}


def cmd_return_times(ctx: Context) -> None:
    i = ctx.cfg["inducing"]
    tmap = _load_map(ctx)
    st = return_time_stats(tmap, i["n_samples"], i["domain"], seed=ctx.cfg["run"]["seed"],
                           threads=ctx.cfg["run"]["threads"])
    st.to_csv(ctx.path("return_times.csv"))
    ctx.wrote("return_times.csv")
    e = tmap.exponents
    ctx.summary = {"domain": i["domain"], "samples": st.n_samples, "tail_slope": st.tail_slope,
                   "tail_window": list(st.tail_window),
                   "predicted_slope": -math.log(e.alpha_prime) / e.B_star}
    if i["domain"] == "right_half" and ctx.has("maxima.csv"):
        w = winding_counts(MaximaSeries.from_csv(ctx.need("maxima.csv")), "both")
        ctx.summary["tv_vs_windings"] = total_variation(w, st.taus)
    ctx.write_json("return_times.json", ctx.summary)


def cmd_reconstruct(ctx: Context) -> None:
    i, d = ctx.cfg["inducing"], ctx.cfg["density"]
    tmap = _load_map(ctx)
    seed = ctx.cfg["run"]["seed"]
    lat = build_lattice(tmap, max(i["depth"], ctx.cfg["lattice"]["depth"]))
    depth = min(i["depth"], resolvable_depth(lat))
    if depth < i["depth"]:
        log.warning("cylinder depth clamped to %d (double precision)", depth)
    build_cylinders(lat, depth).to_csv(ctx.path("cylinders.csv"))
    ctx.wrote("cylinders.csv")
    rho_hat = induced_density(tmap, i["induced_points"], i["induced_bins"], seed=seed)
    rec = pianigiani_reconstruct(tmap, rho_hat, Grid(d["n_bins"]), depth, lattice=lat)
    rec.estimate.to_csv(ctx.path("reconstruction.csv"))
    ctx.wrote("reconstruction.csv")
    ctx.summary = {"depth": depth, "C_r": rec.C_r, "kac_sum": rec.kac_sum(),
                   "raw_mass": rec.raw_mass,
                   "mu_I": float(rec.estimate.integrate(lat.a0_prime, lat.a0))}
    ctx.write_json("reconstruct.json", ctx.summary)


def cmd_stability_sweep(ctx: Context) -> None:
    from .stability import Budget, stability_sweep

    s, f = ctx.cfg["sweep"], ctx.cfg["flow"]
    p, _ = _flow(ctx.cfg)
    fam = (PerturbationSpec.axial(s["epsilons"][0]) if s["kind"] == "axial" else
           PerturbationSpec.planar(s["epsilons"][0], math.radians(s["theta_deg"])))
    budget = Budget(s["n_events"], f["tol"], s["n_bins"], ctx.cfg["map"]["knots"],
                    ctx.cfg["density"]["mc_per_bin"])
    sw = stability_sweep(p, fam, s["epsilons"], budget, seed=ctx.cfg["run"]["seed"],
                         threads=ctx.cfg["run"]["threads"], out=ctx.out)
    sw.to_csv(ctx.path("sweep.csv"))
    ctx.wrote("sweep.csv")
    ctx.summary = sw.as_dict()


def cmd_reproduce_paper(ctx: Context) -> None:
    from .reproduce import reproduce

    f, d = ctx.cfg["flow"], ctx.cfg["density"]
    r = reproduce(f["n_events"], ctx.cfg["run"]["seed"], f["tol"], d["n_bins"],
                  ctx.cfg["inducing"]["n_samples"], _flow(ctx.cfg)[0], _u0(ctx.cfg))
    r.series.to_csv(ctx.path("maxima.csv"))
    ctx.wrote("maxima.csv")
    r.tmap.to_json(ctx.path("map.json"))
    ctx.wrote("map.json")
    r.density.to_csv(ctx.path("density.csv"))
    ctx.wrote("density.csv")
    ctx.write_json("published_comparison.json", r.as_dict())
    with open(ctx.path("published_comparison.csv"), "w") as fh:
        fh.write("quantity,published,measured,tol,pass\n")
        for row in r.rows:
            fh.write(",".join(row.cells()) + "\n")
    ctx.wrote("published_comparison.csv")
    ctx.summary = {"all_pass": all(row.passed for row in r.rows if row.passed is not None)}
    print(r.table())


COMMANDS = {
    "integrate": (cmd_integrate, "integrate the (perturbed) Lorenz field; writes trajectory.csv"),
    "extract-maxima": (cmd_extract_maxima,
                       "Casimir maxima from trajectory.csv (or --stream); writes maxima.csv"),
    "build-map": (cmd_build_map, "normalize maxima and fit the cusp map; writes map.json"),
    "fit-exponents": (cmd_fit_exponents, "refit the local exponents; writes exponents.json"),
    "lattice": (cmd_lattice, "preimage lattice of x0; writes lattice.json"),
    "check-lemma1": (cmd_check_lemma1, "Lemma 1 conditions; writes lemma1.json"),
    "density": (cmd_density, "invariant density of map.json; writes density.csv"),
    "fit-density": (cmd_fit_density, "Bessel-normalized ansatz fit; writes density_fit.json"),
    "return-times": (cmd_return_times, "first-return statistics; writes return_times.csv"),
    "reconstruct": (cmd_reconstruct,
                    "global density from the induced one; writes reconstruction.csv"),
    "stability-sweep": (cmd_stability_sweep, "L1 deviation curve; writes sweep.csv"),
    "reproduce-paper": (cmd_reproduce_paper, "full pipeline against the published constants"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config or a previous run manifest (JSON)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="run.seed")
    common.add_argument("--threads", type=int, help="run.threads")
    common.add_argument("--out", help="run.out (artifact directory)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(
        prog="lorenz-cusp", description=__doc__.split("\n\n")[0],
        formatter_class=argparse.RawDescriptionHelpFormatter, epilog=schema_help())
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=text, description=text,
                            formatter_class=argparse.RawDescriptionHelpFormatter,
                            epilog=schema_help())
        if name == "extract-maxima":
            sp.add_argument("--stream", action="store_true",
                            help="integrate internally until flow.n_events maxima")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for item in args.set:
        cfg.set(item)
    for key in ("seed", "threads", "out"):
        val = getattr(args, key)
        if val is not None:
            cfg.update({"run": {key: val}})
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        ctx = Context(args.command, cfg)
        fn = COMMANDS[args.command][0]
        if args.command == "extract-maxima":
            fn(ctx, stream=args.stream)
        else:
            fn(ctx)
        ctx.finish()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LorenzCuspError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command != "reproduce-paper":
        print(f"{args.command}: ok ({ctx.out})")
        _print_kv({k: v for k, v in ctx.summary.items() if not isinstance(v, (dict, list))})
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
