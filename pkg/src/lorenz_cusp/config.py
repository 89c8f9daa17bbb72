"""Sectioned run configuration with schema validation.

Configs are INI files (``[section]`` / ``key = value``).  Every key has a
type, a default and a check; unknown sections or keys are rejected.  A run
manifest (JSON with a ``config`` object) is accepted wherever a config file
is, so a run can be repeated from its manifest alone.
"""

from __future__ import annotations

import configparser
import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in str(text).replace(";", ",").split(",") if t.strip())


def _positive(v):
    return v > 0


def _pow2(v):
    return v >= 2 ** 9 and v & (v - 1) == 0


@dataclass(frozen=True)
class Key:
    kind: Callable
    default: Any
    check: Callable | None = None
    help: str = ""
    rule: str = ""


SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "seed": Key(int, 0, lambda v: v >= 0, "base seed for every random stream", ">= 0"),
        "threads": Key(int, 1, lambda v: v >= 1, "worker cap", ">= 1"),
        "out": Key(str, "lorenz_run", lambda v: bool(v), "output directory", "non-empty"),
    },
    "flow": {
        "sigma": Key(float, 10.0, _positive, "Lorenz sigma", "> 0"),
        "rho": Key(float, 28.0, _positive, "Lorenz rho", "> 0"),
        "beta": Key(float, 8.0 / 3.0, _positive, "Lorenz beta", "> 0"),
        "tol": Key(float, 1e-10, lambda v: 1e-14 < v < 1e-3, "integrator tolerance",
                   "in (1e-14, 1e-3)"),
        "t_end": Key(float, 1000.0, lambda v: v > 110.0, "integration length", "> 110"),
        "transient": Key(float, 100.0, lambda v: v >= 0, "discarded initial time", ">= 0"),
        "u0": Key(_floats, (1.0, 1.0, -20.0), lambda v: len(v) == 3,
                  "initial state (shifted coordinates)", "3 numbers"),
        "jitter": Key(float, 1.0, lambda v: v >= 0,
                      "std of a seeded Gaussian added to u0", ">= 0"),
        "n_events": Key(int, 100_000, lambda v: v >= 10, "maxima collected by streaming runs",
                        ">= 10"),
    },
    "perturbation": {
        "kind": Key(str, "none", lambda v: v in ("none", "axial", "planar"),
                    "forcing family", "none | axial | planar"),
        "epsilon": Key(float, 0.0, lambda v: v >= 0 and math.isfinite(v), "forcing size",
                       ">= 0"),
        "theta_deg": Key(float, 0.0, lambda v: 0 <= v < 360, "planar forcing angle",
                         "in [0, 360)"),
    },
    "map": {
        "kind": Key(str, "empirical", lambda v: v in ("empirical", "analytic"),
                    "fitted from maxima or the closed-form family", "empirical | analytic"),
        "lobe": Key(str, "all", lambda v: v in ("all", "plus", "minus"),
                    "pairs entering the map", "all | plus | minus"),
        "knots": Key(int, 64, lambda v: v >= 32, "knots per branch", ">= 32"),
        "cusp_bins": Key(int, 256, lambda v: v >= 16, "bins for cusp location", ">= 16"),
    },
    "lattice": {
        "depth": Key(int, 60, lambda v: v >= 3, "preimage lattice depth", ">= 3"),
        "alpha_dd": Key(float, 1.01, lambda v: v > 1, "alpha'' for Lemma 1", "> 1"),
    },
    "density": {
        "method": Key(str, "ulam", lambda v: v in ("ulam", "histogram", "pf"),
                      "estimator", "ulam | histogram | pf"),
        "n_bins": Key(int, 4096, _pow2, "grid size", "power of 2, >= 512"),
        "mc_per_bin": Key(int, 256, lambda v: v >= 64, "Ulam samples per bin", ">= 64"),
        "n_iters": Key(int, 10_000_000, lambda v: v >= 100_000, "histogram orbit length",
                       ">= 1e5"),
        "fit_window": Key(_floats, (0.0, 1.0),
                          lambda v: len(v) == 2 and 0 <= v[0] < v[1] <= 1,
                          "interval used by fit-density", "lo,hi in [0,1]"),
    },
    "inducing": {
        "n_samples": Key(int, 100_000, lambda v: v >= 10_000, "return-time samples", ">= 1e4"),
        "domain": Key(str, "I", lambda v: v in ("I", "right_half"), "inducing set",
                      "I | right_half"),
        "depth": Key(int, 60, lambda v: v >= 1, "cylinder depth", ">= 1"),
        "induced_points": Key(int, 4_000_000, lambda v: v >= 100_000,
                              "orbit length for the induced density", ">= 1e5"),
        "induced_bins": Key(int, 4096, _pow2, "grid on I", "power of 2, >= 512"),
    },
    "sweep": {
        "kind": Key(str, "axial", lambda v: v in ("axial", "planar"), "forcing family",
                    "axial | planar"),
        "epsilons": Key(_floats, (0.5, 0.25, 0.1, 0.05),
                        lambda v: len(v) >= 4 and all(a > b for a, b in zip(v, v[1:])),
                        "decreasing epsilon grid", ">= 4 decreasing values"),
        "theta_deg": Key(float, 70.0, lambda v: 0 <= v < 360, "planar angle", "in [0, 360)"),
        "n_events": Key(int, 100_000, lambda v: v >= 10_000, "maxima per run", ">= 1e4"),
        "n_bins": Key(int, 512, _pow2, "density grid", "power of 2, >= 512"),
    },
}


def _to_int(raw) -> int:
    if isinstance(raw, str):
        try:
            return int(raw)
        except ValueError:
            raw = float(raw)
    if isinstance(raw, float) and not raw.is_integer():
        raise ValueError("expected an integer")
    return int(raw)


def _coerce(path: str, key: Key, raw):
    try:
        if key.kind is int:
            val = _to_int(raw)
        elif key.kind is _floats and isinstance(raw, (list, tuple)):
            val = tuple(float(x) for x in raw)
        else:
            val = key.kind(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, f"cannot parse {raw!r}: {exc}") from None
    if key.check is not None and not key.check(val):
        raise ConfigError(path, f"value {val!r} violates rule: {key.rule}")
    return val


class RunConfig:
    """Validated configuration; ``cfg['flow']['rho']`` style access."""

    def __init__(self, values: dict | None = None):
        self._v = {s: {k: key.default for k, key in keys.items()} for s, keys in SCHEMA.items()}
        if values:
            self.update(values)

    def update(self, values: dict) -> "RunConfig":
        for sec, items in values.items():
            if sec not in SCHEMA:
                raise ConfigError(sec, "unknown section")
            if not isinstance(items, dict):
                raise ConfigError(sec, "section must map keys to values")
            for k, raw in items.items():
                if k not in SCHEMA[sec]:
                    raise ConfigError(f"{sec}.{k}", "unknown key")
                self._v[sec][k] = _coerce(f"{sec}.{k}", SCHEMA[sec][k], raw)
        return self

    def set(self, assignment: str) -> "RunConfig":
        """Apply one ``section.key=value`` override."""
        if "=" not in assignment or "." not in assignment.split("=", 1)[0]:
            raise ConfigError(assignment, "override must look like section.key=value")
        lhs, rhs = assignment.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        return self.update({sec: {key: rhs.strip()}})

    def __getitem__(self, sec: str) -> dict:
        return self._v[sec]

    def as_dict(self) -> dict:
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
                for s, d in self._v.items()}

    def copy(self) -> "RunConfig":
        c = RunConfig()
        c._v = copy.deepcopy(self._v)
        return c

    def to_ini(self) -> str:
        lines = []
        for sec, items in self.as_dict().items():
            lines.append(f"[{sec}]")
            for k, v in items.items():
                text = ",".join(repr(x) for x in v) if isinstance(v, list) else v
                lines.append(f"{k} = {text}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(str(path), "config file not found")
        if path.suffix == ".json":
            try:
                data = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(str(path), f"invalid JSON: {exc}") from None
            return cls(data.get("config", data))
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(str(path), f"invalid INI: {exc}") from None
        return cls({s: dict(parser[s]) for s in parser.sections()})


def schema_help() -> str:
    """Plain-text listing of every key with its default and rule."""
    lines = ["configuration keys (section.key = default  [rule]  help):"]
    for sec, keys in SCHEMA.items():
        for k, key in keys.items():
            d = key.default
            d = ",".join(str(x) for x in d) if isinstance(d, tuple) else d
            lines.append(f"  {sec}.{k} = {d}  [{key.rule}]  {key.help}")
    return "\n".join(lines)
