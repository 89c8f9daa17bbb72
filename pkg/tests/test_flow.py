import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lorenz_cusp.errors import InvalidInputError, InvalidParameterError
from lorenz_cusp.flow import (FlowParams, PerturbationSpec, apply_involution, casimir,
                              casimir_rate, casimir_rate2, conservative_field, decompose,
                              field_jacobian, hamiltonian, hamiltonian_jacobian, integrate,
                              quadratic_form_eigenvalues, shifted_field)

finite = st.floats(-50, 50, allow_nan=False)
vec = st.tuples(finite, finite, finite).map(np.array)


def test_params_validation():
    assert FlowParams.classical() == FlowParams(10.0, 28.0, 8.0 / 3.0)
    with pytest.raises(InvalidParameterError):
        FlowParams(0.0, 28.0, 1.0)
    with pytest.raises(InvalidParameterError):
        FlowParams(10.0, float("nan"), 1.0)
    with pytest.raises(InvalidParameterError):
        PerturbationSpec("tilted", 1.0)


def test_fixed_points_are_equilibria(classical):
    c1 = np.array([math.sqrt(72), math.sqrt(72), -11.0])
    np.testing.assert_allclose(classical.c1(), c1)
    for c in (classical.c0(), classical.c1(), classical.c2()):
        assert np.abs(shifted_field(classical, PerturbationSpec.none(), c)).max() < 1e-12


def test_field_by_hand(classical):
    # direct substitution: (-10, 28 - 0 - 38, -(8/3) 38)
    out = shifted_field(classical, PerturbationSpec.none(), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(out, [-10.0, -10.0, -8.0 / 3.0 * 38.0], rtol=1e-14)


def test_forcing_is_additive(classical):
    u = np.array([1.0, -2.0, 3.0])
    base = shifted_field(classical, PerturbationSpec.none(), u)
    ax = shifted_field(classical, PerturbationSpec.axial(0.5), u)
    np.testing.assert_allclose(ax - base, [0, 0, -0.5 * classical.beta * 38.0], atol=1e-12)
    pl = shifted_field(classical, PerturbationSpec.planar(2.5, math.radians(70)), u)
    np.testing.assert_allclose(pl - base, [2.5 * math.cos(math.radians(70)),
                                           2.5 * math.sin(math.radians(70)), 0], atol=1e-12)


def test_invariant_values(classical):
    c0, c1 = classical.c0(), classical.c1()
    assert casimir([0, 0, 0]) == 0
    assert casimir(c1) == pytest.approx(265.0)
    assert casimir(c0) == pytest.approx(1444.0)
    assert hamiltonian(classical, [0, 0, 0]) == 0
    assert hamiltonian(classical, c1) == pytest.approx(278.5)
    assert hamiltonian(classical, [0, 0, 1]) == pytest.approx(-9.5)
    for u in ([0, 0, 0], c0, c1):
        assert casimir_rate(classical, u) == pytest.approx(0.0, abs=1e-10)
    assert casimir_rate2(classical, [0, 0, -19.0]) == pytest.approx(0.0, abs=1e-10)
    assert casimir_rate2(classical, c0) == pytest.approx(0.0, abs=1e-10)


def test_quadratic_form_eigenvalues(classical):
    l1, l2 = quadratic_form_eigenvalues(classical, 0.0)
    assert l2 == pytest.approx((101 - math.sqrt(9801 + 109 ** 2)) / 2, rel=1e-12)
    assert l2 == pytest.approx(-23.12, abs=0.01)
    for z in np.linspace(-60, 60, 241):
        a, b = quadratic_form_eigenvalues(classical, z)
        assert a > 0
        assert a + b == pytest.approx(classical.sigma ** 2 + 1)


@settings(max_examples=60, deadline=None)
@given(vec)
def test_decomposition_identity(u):
    p = FlowParams.classical()
    v, w = decompose(p, u)
    np.testing.assert_allclose(v - w, shifted_field(p, PerturbationSpec.none(), u),
                               rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(v, conservative_field(p, u), rtol=1e-12, atol=1e-9)
    assert abs(np.trace(hamiltonian_jacobian(p, u))) < 1e-10


@settings(max_examples=60, deadline=None)
@given(vec)
def test_hamiltonian_part_divergence_free_numerically(u):
    # central differences of v, independent of the closed-form Jacobian
    p = FlowParams.classical()
    h = 1e-4
    div = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        div += (conservative_field(p, u + e)[i] - conservative_field(p, u - e)[i]) / (2 * h)
    assert abs(div) < 1e-10 * max(1.0, np.abs(u).max())


@settings(max_examples=40, deadline=None)
@given(vec)
def test_jacobian_matches_finite_difference(u):
    p = FlowParams.classical()
    none = PerturbationSpec.none()
    h = 1e-6
    J = np.column_stack([(shifted_field(p, none, u + h * e) - shifted_field(p, none, u - h * e))
                         / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(J, field_jacobian(p, u), atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(vec)
def test_involution(u):
    ru = apply_involution(u)
    np.testing.assert_array_equal(apply_involution(ru), u)
    p = FlowParams.classical()
    none = PerturbationSpec.none()
    np.testing.assert_allclose(shifted_field(p, none, ru),
                               apply_involution(shifted_field(p, none, u)), atol=1e-12)


def test_involution_fixtures(classical):
    np.testing.assert_array_equal(apply_involution([0, 0, 5]), [0, 0, 5])
    np.testing.assert_allclose(apply_involution(classical.c1()), classical.c2())


def test_casimir_rate2_finite_difference(classical):
    tr = integrate(classical, PerturbationSpec.none(), [1.0, 1.0, -20.0], 5.0, 1e-12)
    h = 1e-3

    def at(s):
        return np.atleast_2d(tr(s))[0]

    for t in (1.0, 2.5, 4.0):
        c = [casimir(at(s)) for s in (t - h, t, t + h)]
        fd = (c[0] - 2 * c[1] + c[2]) / h ** 2
        # O(h^2) truncation: relative 1e-3 is loose enough at h = 1e-3
        assert fd == pytest.approx(casimir_rate2(classical, at(t)), rel=1e-3)
        fd1 = (c[2] - c[0]) / (2 * h)
        assert fd1 == pytest.approx(casimir_rate(classical, at(t)), rel=1e-3)


@settings(max_examples=60, deadline=None)
@given(vec)
def test_casimir_rates_chain_rule(u):
    # dC/dt = 2 u.f and d2C/dt2 = 2 f.f + 2 u.(J f)
    p = FlowParams.classical()
    f = shifted_field(p, PerturbationSpec.none(), u)
    J = field_jacobian(p, u)
    scale = 1.0 + np.abs(u).max() ** 4
    assert casimir_rate(p, u) == pytest.approx(2 * u @ f, abs=1e-10 * scale)
    assert casimir_rate2(p, u) == pytest.approx(2 * f @ f + 2 * u @ (J @ f), abs=1e-10 * scale)


def test_fixed_point_trajectory_is_constant(classical):
    tr = integrate(classical, PerturbationSpec.none(), classical.c1(), 20.0, 1e-10)
    assert np.abs(tr.states - classical.c1()).max() < 1e-10


def test_short_horizon_against_tight_tolerance(classical):
    a = integrate(classical, PerturbationSpec.none(), [1, 1, -20], 10.0, 1e-10)
    b = integrate(classical, PerturbationSpec.none(), [1, 1, -20], 10.0, 1e-12)
    assert np.abs(a.states[-1] - b.states[-1]).max() < 1e-6


def test_matches_scipy_dop853(classical):
    # independent oracle over a short stretch, before error growth dominates
    from scipy.integrate import solve_ivp
    none = PerturbationSpec.none()
    ref = solve_ivp(lambda t, u: shifted_field(classical, none, u), (0, 2.0), [1, 1, -20],
                    method="DOP853", rtol=1e-13, atol=1e-13, dense_output=True)
    tr = integrate(classical, none, [1, 1, -20], 2.0, 1e-12)
    ts = np.linspace(0, 2.0, 41)
    assert np.abs(tr(ts) - ref.sol(ts).T).max() < 1e-7


def test_trajectory_invariants(classical):
    tr = integrate(classical, PerturbationSpec.none(), [1, 1, -20], 30.0)
    assert np.all(np.diff(tr.times) > 0)
    assert np.all(np.isfinite(tr.states))
    assert tr.t_end == pytest.approx(30.0)
    mid = 0.5 * (tr.times[10] + tr.times[11])
    x = np.atleast_2d(tr(mid))[0]
    assert np.all(np.isfinite(x))


def test_r_equivariance_of_orbits(classical):
    tol = 1e-10
    u0 = np.array([1.0, 1.0, -20.0])
    a = integrate(classical, PerturbationSpec.none(), u0, 10.0, tol)
    b = integrate(classical, PerturbationSpec.none(), apply_involution(u0), 10.0, tol)
    ts = np.linspace(0, 10, 201)
    ra = np.array([apply_involution(x) for x in a(ts)])
    assert np.abs(ra - b(ts)).max() < 10 * tol


def test_conservative_first_integrals(classical):
    tr = integrate(classical, PerturbationSpec.none(), [1.0, 1.0, -20.0], 20.0, 1e-12,
                   conservative=True)
    c = np.array([casimir(x) for x in tr.states])
    h = np.array([hamiltonian(classical, x) for x in tr.states])
    assert np.abs(c - c[0]).max() / tr.t_end < 1e-8
    assert np.abs(h - h[0]).max() / tr.t_end < 1e-8


def test_bad_state_rejected(classical):
    with pytest.raises(InvalidInputError):
        shifted_field(classical, PerturbationSpec.none(), [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        integrate(classical, PerturbationSpec.none(), [np.nan, 0, 0], 1.0)
