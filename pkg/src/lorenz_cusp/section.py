"""Poincare section on the Casimir maxima and the normalized return data."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _flowkernels as _k
from .errors import (AmbiguousLobeError, DegenerateRangeError, EmptySectionError,
                     InvalidInputError, PreconditionError)
from .flow import (DEFAULT_TOL, TRANSIENT, FlowParams, PerturbationSpec, Trajectory,
                   _check_tol, _prm, _raise_status, _state)

PLUS = 1
MINUS = -1
LOBE_NAMES = {PLUS: "plus", MINUS: "minus"}

REFINE_TOL = 1e-8
EVENT_TIME_TOL = 1e-10
MERGE_DT = 1e-3


@dataclass(frozen=True)
class CasimirEvent:
    t: float
    u: np.ndarray
    c_value: float
    lobe: str


@dataclass
class MaximaSeries:
    """Time-ordered Casimir maxima with their normalization interval."""

    times: np.ndarray
    states: np.ndarray
    c_values: np.ndarray
    z_min: float
    z_max: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 3)
        self.c_values = np.asarray(self.c_values, dtype=float)
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("event times must be strictly increasing")

    @classmethod
    def from_events(cls, times, states) -> "MaximaSeries":
        states = np.asarray(states, dtype=float).reshape(-1, 3)
        c = np.einsum("ij,ij->i", states, states)
        if len(c) == 0:
            raise EmptySectionError("no Casimir maxima found")
        return cls(times, states, c, float(c.min()), float(c.max()))

    @property
    def lobes(self) -> np.ndarray:
        return np.where(self.states[:, 0] > 0, PLUS, MINUS).astype(np.int8)

    def __len__(self):
        return len(self.times)

    @property
    def events(self) -> list[CasimirEvent]:
        c = self.c_values
        return [CasimirEvent(float(t), u.copy(), float(ci), lobe_label(u))
                for t, u, ci in zip(self.times, self.states, c)]

    def mean_gap(self) -> float:
        return float(np.mean(np.diff(self.times)))

    def shifted(self, dc: float) -> "MaximaSeries":
        """Same events with every c_value moved by ``dc`` (testing helper)."""
        return MaximaSeries(self.times, self.states, self.c_values + dc,
                            self.z_min + dc, self.z_max + dc)

    def to_csv(self, path):
        c = self.c_values
        lobes = self.lobes
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "c_value", "lobe", "u1", "u2", "u3"])
            for t, ci, lb, u in zip(self.times, c, lobes, self.states):
                wr.writerow([repr(float(t)), repr(float(ci)), LOBE_NAMES[int(lb)],
                             repr(float(u[0])), repr(float(u[1])), repr(float(u[2]))])

    @classmethod
    def from_csv(cls, path) -> "MaximaSeries":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise EmptySectionError(f"{path} holds no events")
        t = np.array([float(r["t"]) for r in rows])
        u = np.array([[float(r["u1"]), float(r["u2"]), float(r["u3"])] for r in rows])
        return cls.from_events(t, u)


@dataclass
class NormalizedPairs:
    s: np.ndarray
    s_next: np.ndarray
    z_min: float
    z_max: float

    @property
    def count(self) -> int:
        return len(self.s)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["s_k", "s_next"])
            for a, b in zip(self.s, self.s_next):
                wr.writerow([repr(float(a)), repr(float(b))])

    @classmethod
    def from_csv(cls, path) -> "NormalizedPairs":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], float("nan"), float("nan"))


def lobe_label(u) -> str:
    u1 = float(np.asarray(u, dtype=float)[0])
    if u1 == 0.0:
        raise AmbiguousLobeError("u1 = 0 lies on the lobe boundary")
    return "plus" if u1 > 0 else "minus"


def extract_maxima(traj: Trajectory, refine_tol: float = REFINE_TOL,
                   t_discard: float = TRANSIENT) -> MaximaSeries:
    """Locate the local maxima of C(t) on a stored trajectory.

    Sign changes of dC/dt from + to - are refined by bisection on the cubic
    Hermite interpolant; an event is kept only where d2C/dt2 < 0.
    """
    if traj.t_end < t_discard + 10.0:
        raise PreconditionError(
            f"trajectory ends at t={traj.t_end}, needs > transient + 10 = {t_discard + 10}")
    prm = _prm(traj.params, traj.pert, traj.conservative)
    t, u = _k.maxima_from_nodes(traj.times, traj.states, traj.derivs, prm,
                                float(t_discard), float(refine_tol), EVENT_TIME_TOL,
                                MERGE_DT)
    if len(t) == 0:
        raise EmptySectionError("no Casimir maxima after the transient")
    return MaximaSeries.from_events(t, u)


@dataclass
class ScanResult:
    series: MaximaSeries
    n_steps: int
    n_rejected: int
    t_end: float


def scan_maxima(p: FlowParams, pert: PerturbationSpec, u0, t_end: float,
                tol: float = DEFAULT_TOL, *, refine_tol: float = REFINE_TOL,
                t_discard: float = TRANSIENT, max_events: int | None = None) -> ScanResult:
    """Integrate and collect Casimir maxima without storing the orbit.

    Stops at ``t_end`` or after ``max_events`` events, whichever comes first.
    """
    _check_tol(tol, t_end)
    u0 = _state(u0)
    cap = np.iinfo(np.int64).max if max_events is None else int(max_events)
    t, u, steps, rej, status, t_reached = _k.scan_maxima(
        u0, float(t_end), float(tol), _prm(p, pert), float(t_discard),
        float(refine_tol), EVENT_TIME_TOL, MERGE_DT, cap)
    _raise_status(status, t_reached)
    if len(t) == 0:
        raise EmptySectionError("no Casimir maxima after the transient")
    return ScanResult(MaximaSeries.from_events(t, u), int(steps), int(rej), float(t_reached))


def collect_maxima(p, pert, u0, n_events: int, tol=DEFAULT_TOL, *,
                   refine_tol=REFINE_TOL, t_discard=TRANSIENT) -> ScanResult:
    """Integrate until ``n_events`` maxima have been collected after the transient."""
    # 0.75 time units per maximum on the classical attractor; generous cap
    t_cap = t_discard + 4.0 * n_events + 100.0
    return scan_maxima(p, pert, u0, t_cap, tol, refine_tol=refine_tol,
                       t_discard=t_discard, max_events=n_events)


def normalize(series: MaximaSeries, lobe: str = "all") -> NormalizedPairs:
    """Affine rescaling of consecutive maxima onto [0, 1].

    The interval is always the full series' [z_min, z_max].  With
    ``lobe='plus'`` or ``'minus'`` only pairs starting on that lobe are kept;
    the interval is not recomputed on the subset because the sample maximum
    of a cusp peak is a noisy extreme and would shift the two lobe maps apart.
    """
    if len(series) < 2:
        raise PreconditionError("normalize needs at least 2 events")
    c = series.c_values
    a, b = c[:-1], c[1:]
    z_min, z_max = series.z_min, series.z_max
    if lobe != "all":
        want = PLUS if lobe == "plus" else MINUS
        keep = series.lobes[:-1] == want
        a, b = a[keep], b[keep]
        if len(a) == 0:
            raise EmptySectionError(f"no pairs start on the {lobe} lobe")
    if not z_max > z_min:
        raise DegenerateRangeError("z_max equals z_min")
    span = z_max - z_min
    s = np.clip((a - z_min) / span, 0.0, 1.0)
    s_next = np.clip((b - z_min) / span, 0.0, 1.0)
    return NormalizedPairs(s, s_next, z_min, z_max)


def _run_lengths(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and lengths of maximal constant runs."""
    if len(labels) == 0:
        return labels[:0], np.zeros(0, dtype=int)
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [len(labels)]))
    return labels[starts], ends - starts


def winding_counts(series_or_labels, side: str = "both") -> np.ndarray:
    """Number of windings around the opposite fixed point per excursion.

    An excursion starts when the orbit leaves a lobe and ends at its next
    maximum back on that lobe; the count is the number of maxima on the other
    lobe in between.  Runs cut by either end of the series are dropped.
    """
    labels = (series_or_labels.lobes if isinstance(series_or_labels, MaximaSeries)
              else np.asarray(series_or_labels))
    labels = np.where(np.asarray(labels) > 0, PLUS, MINUS)
    if not np.any(labels == PLUS) and side in ("both", "plus"):
        raise PreconditionError("series has no plus-lobe event")
    vals, lens = _run_lengths(labels)
    if len(lens) < 3:
        return np.zeros(0, dtype=int)
    inner_vals, inner_lens = vals[1:-1], lens[1:-1]
    if side == "plus":
        # excursions away from plus are runs of minus
        return inner_lens[inner_vals == MINUS].astype(int)
    if side == "minus":
        return inner_lens[inner_vals == PLUS].astype(int)
    return inner_lens.astype(int)


def ks_lobes(series: MaximaSeries) -> float:
    """Kolmogorov-Smirnov distance between plus and minus c_value samples."""
    from scipy.stats import ks_2samp

    c = series.c_values
    lob = series.lobes
    return float(ks_2samp(c[lob == PLUS], c[lob == MINUS]).statistic)


def fixed_step_maxima_times(p: FlowParams, pert: PerturbationSpec, u0, t_end: float,
                            dt: float = 1e-5, t_discard: float = TRANSIENT) -> np.ndarray:
    """Maxima times from a fixed-step RK4 scan (independent brute-force oracle)."""
    return _k.fixed_step_rk4_maxima(_state(u0), float(t_end), float(dt),
                                    _prm(p, pert), float(t_discard))
