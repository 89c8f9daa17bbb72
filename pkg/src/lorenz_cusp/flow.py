"""Lorenz '63 field in rigid-body (shifted) coordinates.

The shifted coordinates are ``u = (x1, x2, x3 - (rho + sigma))``.  In these
coordinates the field splits into a divergence-free Hamiltonian part ``v``
and a gradient part ``w = Lambda u - f``; the Casimir ``C = |u|^2`` is
conserved by ``v`` alone.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import NamedTuple

import numpy as np

from . import _flowkernels as _k
from .errors import (DivergenceError, InvalidInputError, InvalidParameterError,
                     NumericError, PreconditionError, StiffnessError)

DEFAULT_U0 = (1.0, 1.0, -20.0)
DEFAULT_TOL = 1e-10
TRANSIENT = 100.0

PERTURBATION_KINDS = ("none", "axial", "planar")


@dataclass(frozen=True)
class FlowParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        for name in ("sigma", "rho", "beta"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise InvalidParameterError(f"{name} must be finite and > 0, got {val}")

    @classmethod
    def classical(cls) -> "FlowParams":
        return cls(10.0, 28.0, 8.0 / 3.0)

    @property
    def m(self) -> float:
        """rho + sigma, the shift of the vertical axis."""
        return self.rho + self.sigma

    def c0(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.m])

    def c1(self) -> np.ndarray:
        q = math.sqrt(self.beta * (self.rho - 1.0))
        return np.array([q, q, -(self.sigma + 1.0)])

    def c2(self) -> np.ndarray:
        return apply_involution(self.c1())

    def as_dict(self) -> dict:
        return {"sigma": self.sigma, "rho": self.rho, "beta": self.beta}


@dataclass(frozen=True)
class PerturbationSpec:
    """Additive constant forcing.

    ``axial`` adds ``(0, 0, -eps*beta*(rho+sigma))`` and keeps the R-symmetry;
    ``planar`` adds ``(eps*cos(theta), eps*sin(theta), 0)`` and breaks it.
    """

    kind: str = "none"
    epsilon: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise InvalidParameterError(f"unknown perturbation kind {self.kind!r}")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise InvalidParameterError("epsilon must be finite and >= 0")
        if not (0.0 <= self.theta < 2 * math.pi):
            raise InvalidParameterError("theta must lie in [0, 2pi)")

    @classmethod
    def none(cls) -> "PerturbationSpec":
        return cls("none", 0.0, 0.0)

    @classmethod
    def axial(cls, epsilon: float) -> "PerturbationSpec":
        return cls("axial", float(epsilon), 0.0)

    @classmethod
    def planar(cls, epsilon: float, theta: float) -> "PerturbationSpec":
        return cls("planar", float(epsilon), float(theta))

    def forcing(self, p: FlowParams) -> np.ndarray:
        if self.kind == "axial":
            return np.array([0.0, 0.0, -self.epsilon * p.beta * p.m])
        if self.kind == "planar":
            return np.array([self.epsilon * math.cos(self.theta),
                             self.epsilon * math.sin(self.theta), 0.0])
        return np.zeros(3)

    def with_epsilon(self, epsilon: float) -> "PerturbationSpec":
        return PerturbationSpec(self.kind, float(epsilon), self.theta)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "epsilon": self.epsilon, "theta": self.theta}


class VectorFieldDecomposition(NamedTuple):
    hamiltonian_part: np.ndarray
    gradient_part: np.ndarray


def _state(u) -> np.ndarray:
    arr = np.asarray(u, dtype=float)
    if arr.shape != (3,):
        raise InvalidInputError(f"state must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"non-finite state {arr}")
    return arr


def _prm(p: FlowParams, pert: PerturbationSpec | None = None, conservative=False):
    g = np.zeros(3) if pert is None else pert.forcing(p)
    return np.array([p.sigma, p.rho, p.beta, g[0], g[1], g[2],
                     1.0 if conservative else 0.0])


def shifted_field(p: FlowParams, pert: PerturbationSpec, u) -> np.ndarray:
    u = _state(u)
    out = np.empty(3)
    _k.field(u, _prm(p, pert), out)
    return out


def conservative_field(p: FlowParams, u) -> np.ndarray:
    """The Hamiltonian part alone (Lambda = 0, f = 0); testing only."""
    u = _state(u)
    out = np.empty(3)
    _k.field(u, _prm(p, None, conservative=True), out)
    return out


def decompose(p: FlowParams, u) -> VectorFieldDecomposition:
    u = _state(u)
    grad_h = np.array([2.0 * u[0], u[1], u[2] - p.sigma])
    v = np.cross(grad_h, u)
    w = np.array([p.sigma * u[0], u[1], p.beta * u[2] + p.beta * p.m])
    return VectorFieldDecomposition(v, w)


def hamiltonian_jacobian(p: FlowParams, u) -> np.ndarray:
    u = _state(u)
    return np.array([[0.0, p.sigma, 0.0],
                     [-p.sigma - u[2], 0.0, -u[0]],
                     [u[1], u[0], 0.0]])


def field_jacobian(p: FlowParams, u) -> np.ndarray:
    u = _state(u)
    return np.array([[-p.sigma, p.sigma, 0.0],
                     [-u[2] - p.sigma, -1.0, -u[0]],
                     [u[1], u[0], -p.beta]])


def casimir(u) -> float:
    u = _state(u)
    return float(u @ u)


def hamiltonian(p: FlowParams, u) -> float:
    u = _state(u)
    omega = np.array([2.0, 1.0, 1.0])
    return float(0.5 * u @ (omega * u) - p.sigma * u[2])


def dissipation_potential(p: FlowParams, u) -> float:
    """K(u) = u.Lambda u / 2 - f.u, whose gradient is the dissipative part."""
    u = _state(u)
    lam = np.array([p.sigma, 1.0, p.beta])
    return float(0.5 * u @ (lam * u) + p.beta * p.m * u[2])


def ellipsoid_e(p: FlowParams, u) -> float:
    u = _state(u)
    return float(p.sigma * u[0] ** 2 + u[1] ** 2 + p.beta * (u[2] + p.m / 2) ** 2)


def casimir_rate(p: FlowParams, u) -> float:
    """dC/dt along the unperturbed flow."""
    return -2.0 * (ellipsoid_e(p, u) - p.beta * p.m ** 2 / 4.0)


def casimir_rate2(p: FlowParams, u) -> float:
    """d^2C/dt^2 along the unperturbed flow (a quartic in u)."""
    u = _state(u)
    s, b, half = p.sigma, p.beta, p.m / 2.0
    z = u[2] + half
    k = s * (s - 1.0) + (b - 1.0) * z + half
    return 4.0 * (s * s * u[0] ** 2 + u[1] ** 2 - k * u[0] * u[1]
                  + b * b * z * z + b * b * half * z)


def quadratic_form_eigenvalues(p: FlowParams, z: float) -> tuple[float, float]:
    s = p.sigma
    k = p.m / 2.0 + s * (s - 1.0) + (p.beta - 1.0) * z
    root = math.sqrt((s * s - 1.0) ** 2 + k * k)
    return (s * s + 1.0 + root) / 2.0, (s * s + 1.0 - root) / 2.0


def apply_involution(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.array([-u[0], -u[1], u[2]])


@dataclass
class Trajectory:
    """Accepted integrator nodes plus the field at each node.

    Between nodes the state is the cubic Hermite interpolant built from the
    node values and derivatives.
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    n_steps: int
    n_rejected: int
    params: FlowParams = dc_field(default_factory=FlowParams.classical)
    pert: PerturbationSpec = dc_field(default_factory=PerturbationSpec.none)
    tol: float = DEFAULT_TOL
    conservative: bool = False

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return len(self.times)

    def __call__(self, t) -> np.ndarray:
        tq = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(tq < self.times[0]) or np.any(tq > self.times[-1]):
            raise InvalidInputError("interpolation time outside the trajectory")
        out = np.empty((tq.size, 3))
        if len(self.times) == 1:
            out[:] = self.states[0]
        else:
            _k.interpolate_nodes(self.times, self.states, self.derivs, tq, out)
        return out[0] if np.ndim(t) == 0 else out

    def sample(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        t = np.arange(self.times[0], self.times[-1], dt)
        return t, self(t)

    def to_csv(self, path, dt: float | None = None):
        if dt is None:
            t, states = self.times, self.states
        else:
            t, states = self.sample(dt)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "u1", "u2", "u3"])
            for ti, ui in zip(t, states):
                wr.writerow([repr(float(ti))] + [repr(float(x)) for x in ui])


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:4]


def _raise_status(status, t_reached=None):
    where = "" if t_reached is None else f" at t={t_reached:.6g}"
    if status == _k.STIFF:
        raise StiffnessError("step size underflow" + where)
    if status == _k.DIVERGED:
        raise DivergenceError("non-finite or unbounded state" + where)
    if status == _k.MAX_STEPS:
        raise NumericError("maximum number of steps exceeded" + where)


def _check_tol(tol, t_end):
    if not (1e-14 < tol < 1e-3):
        raise PreconditionError(f"tol must lie in (1e-14, 1e-3), got {tol}")
    if not t_end > 0:
        raise PreconditionError(f"t_end must be > 0, got {t_end}")


def integrate(p: FlowParams, pert: PerturbationSpec, u0, t_end: float,
              tol: float = DEFAULT_TOL, *, conservative: bool = False,
              max_steps: int = 50_000_000) -> Trajectory:
    """Integrate the shifted field with an adaptive Dormand-Prince 5(4) pair.

    Every accepted node is stored, so memory grows with ``t_end``; use
    :func:`lorenz_cusp.section.scan_maxima` for long orbits.
    """
    _check_tol(tol, t_end)
    u0 = _state(u0)
    prm = _prm(p, pert, conservative)
    ts, us, fs, steps, rej, status = _k.integrate_dense(u0, float(t_end), float(tol),
                                                        prm, max_steps)
    _raise_status(status, ts[-1])
    return Trajectory(ts, us, fs, int(steps), int(rej), p, pert, tol, conservative)


def initial_condition(seed: int | None = None, scale: float = 1.0) -> np.ndarray:
    """Default start point, optionally jittered by a seeded Gaussian."""
    u0 = np.array(DEFAULT_U0)
    if seed is None:
        return u0
    rng = np.random.default_rng(seed)
    return u0 + scale * rng.standard_normal(3)


def integrate_ensemble(p, pert, u0s, t_end, tol=DEFAULT_TOL, threads=1):
    """Integrate several initial conditions; kernels release the GIL."""
    u0s = [_state(u) for u in u0s]
    if threads <= 1:
        return [integrate(p, pert, u, t_end, tol) for u in u0s]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda u: integrate(p, pert, u, t_end, tol), u0s))
