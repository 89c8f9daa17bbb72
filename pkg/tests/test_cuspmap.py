import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lorenz_cusp.cuspmap import (PUBLISHED_EXPONENTS, CuspMap, LocalExponents, build_analytic,
                                 build_empirical, build_lattice, check_lemma1, fit_exponents,
                                 p_star, sup_distance)
from lorenz_cusp.errors import (DomainError, FitError, InvalidParameterError,
                                PreconditionError)
from lorenz_cusp.section import normalize

E = PUBLISHED_EXPONENTS


@pytest.fixture(scope="module")
def analytic_pairs(analytic_map):
    x = analytic_map.orbit(0.123456, 200_000)[1000:]
    return x[:-1], x[1:]


@pytest.fixture(scope="module")
def rebuilt(analytic_pairs):
    return build_empirical(analytic_pairs)


def test_exponent_ranges():
    assert E.problems() == []
    assert E.B_star == max(E.B, E.B_prime)
    bad = LocalExponents(**{**E.as_dict(), "alpha": 1.2})
    assert "0 < alpha < 1" in bad.problems()
    with pytest.raises(InvalidParameterError):
        build_analytic(bad)
    with pytest.raises(InvalidParameterError):
        build_analytic(E, x0=1.0)


def test_boundary_conditions(analytic_map):
    T = analytic_map
    x0 = T.x0
    assert T(0.0) == 0.0
    assert T(1.0) == pytest.approx(0.0, abs=1e-15)
    assert T.eval_at_distance("left", 0.0) == pytest.approx(1.0)
    assert T.eval_at_distance("right", 0.0) == pytest.approx(1.0)
    assert T(x0 - 1e-12) == pytest.approx(1.0, abs=1e-3)
    T.check_invariants()


def test_branch_monotonicity(analytic_map):
    T = analytic_map
    xs = np.linspace(0, 1, 10_001)
    left, right = xs[xs < T.x0], xs[xs > T.x0]
    assert np.all(np.diff(T(left)) > 0)
    assert np.all(np.diff(T(right)) < 0)


def test_germ_at_zero(analytic_map):
    k = np.arange(12, 22)
    x = 2.0 ** -k
    ratio = (analytic_map(x) - E.alpha_prime * x) / x ** (1 + E.psi)
    assert ratio[-1] == pytest.approx(E.beta_prime, rel=1e-2)
    assert analytic_map.deriv(0.0) == pytest.approx(E.alpha_prime, rel=1e-12)


def test_cusp_germs(analytic_map):
    T = analytic_map
    d = 2.0 ** -np.arange(20, 30)
    left = np.array([(1 - T.eval_at_distance("left", di)) / di ** E.B_prime for di in d])
    right = np.array([(1 - T.eval_at_distance("right", di)) / di ** E.B for di in d])
    assert left[-1] == pytest.approx(E.A_prime, rel=1e-3)
    assert right[-1] == pytest.approx(E.A, rel=1e-3)
    dl = np.abs([T.deriv_at_distance("left", di) for di in d])
    assert np.all(np.diff(dl) > 0)
    assert T.deriv(T.x0) == math.inf


def test_derivative_against_finite_difference(analytic_map):
    T = analytic_map
    xs = np.linspace(0, 1, 2001)
    keep = (np.abs(xs) > 1e-3) & (np.abs(xs - T.x0) > 1e-3) & (np.abs(xs - 1) > 1e-3)
    xs = xs[keep]
    h = 1e-7
    fd = (T(xs + h) - T(xs - h)) / (2 * h)
    rel = np.abs(fd - T.deriv(xs)) / np.abs(T.deriv(xs))
    assert rel.max() < 1e-5


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.sampled_from(["left", "right"]))
def test_inverse_round_trip(y, branch):
    T = build_analytic()
    x = T.invert_branch(branch, y)
    # near the cusp one ulp of x moves T by |T'| ulp, so that is the attainable bound
    slack = abs(T.deriv(x)) * np.spacing(x) if x != T.x0 else 1.0 - y
    assert abs(T(x) - y) <= 1e-12 + slack
    assert (x <= T.x0) if branch == "left" else (x >= T.x0)
    # in distance coordinates the inverse is exact to tolerance
    _, d = T.invert_with_distance(branch, y)
    if d > 0:
        assert T.eval_at_distance(branch, d) == pytest.approx(y, abs=1e-12)


def test_inverse_round_trip_uniform(rng):
    T = build_analytic()
    worst = 0.0
    for y in rng.uniform(0, 1, 1000):
        for branch in ("left", "right"):
            _, d = T.invert_with_distance(branch, y)
            worst = max(worst, abs(T.eval_at_distance(branch, d) - y))
    assert worst < 1e-12


def test_inverse_endpoints(analytic_map):
    T = analytic_map
    assert T.invert_branch("left", 1.0) == pytest.approx(T.x0)
    assert T.invert_branch("left", 0.0) == 0.0
    assert T.invert_branch("right", 1.0) == pytest.approx(T.x0)
    assert T.invert_branch("right", 0.0) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        T.invert_branch("left", 1.5)


def test_round_trip_map(analytic_map, rebuilt):
    # interior sup error; the cusp neighborhood is excluded as in sup_distance
    assert sup_distance(analytic_map, rebuilt) < 1e-3
    assert abs(rebuilt.x0 - analytic_map.x0) < 1e-3


def test_round_trip_exponents(rebuilt):
    got = rebuilt.exponents
    for name in ("alpha_prime", "alpha", "B_prime", "B"):
        assert getattr(got, name) == pytest.approx(getattr(E, name), abs=0.02), name


def test_fit_exponents_on_exact_pairs(analytic_pairs, analytic_map):
    e, windows = fit_exponents(*analytic_pairs, analytic_map.x0)
    assert e.alpha_prime == pytest.approx(E.alpha_prime, abs=0.02)
    assert e.B == pytest.approx(E.B, abs=0.02)
    assert set(windows)


def test_too_few_pairs_rejected(analytic_pairs):
    x, y = analytic_pairs
    with pytest.raises(PreconditionError):
        build_empirical((x[:5000], y[:5000]))


def test_json_round_trip(rebuilt, analytic_map, tmp_path):
    for T in (rebuilt, analytic_map):
        T.to_json(tmp_path / "m.json")
        back = CuspMap.from_json(tmp_path / "m.json")
        xs = np.linspace(0, 1, 1001)
        np.testing.assert_array_equal(back(xs), T(xs))


def test_lorenz_cusp_reproducible(classical):
    from lorenz_cusp.flow import PerturbationSpec, initial_condition
    from lorenz_cusp.section import collect_maxima

    def cusp(seed):
        s = collect_maxima(classical, PerturbationSpec.none(), initial_condition(seed),
                           100_000).series
        return build_empirical(normalize(s)).x0

    assert abs(cusp(7) - cusp(8)) < 0.005


def test_lattice_orderings(analytic_map):
    T = analytic_map
    lat = build_lattice(T, 40)
    assert T(lat.a0) == pytest.approx(T.x0, abs=1e-9)
    assert T(lat.a0_prime) == pytest.approx(T.x0, abs=1e-9)
    assert np.all(np.diff(lat.a_prime) < 0)
    assert np.all(np.diff(lat.a) > 0)
    assert np.all(np.diff(lat.b[1:]) < 0) and np.all(lat.b[1:] > T.x0)
    assert np.all(np.diff(lat.b_prime[1:]) > 0) and np.all(lat.b_prime[1:] < T.x0)
    for p in range(1, 12):
        assert T(lat.a_prime[p]) == pytest.approx(lat.a_prime[p - 1], abs=1e-9)
        assert T(lat.b[p]) == pytest.approx(lat.a[p - 1], abs=1e-9)
        assert T(lat.b_prime[p]) == pytest.approx(lat.a[p - 1], abs=1e-9)


def test_lattice_geometric_ratio(analytic_map):
    lat = build_lattice(analytic_map, 45)
    r = lat.a_prime[20:41] / lat.a_prime[21:42]
    assert np.all((r >= 1.10) & (r <= 1.13))


def test_lattice_oracle_direct_inverse(analytic_map):
    # independent: iterate the exact left inverse by plain bisection
    T = analytic_map

    def left_inv(y):
        lo, hi = 0.0, T.x0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if T(mid) < y else (lo, mid)
        return 0.5 * (lo + hi)

    lat = build_lattice(T, 10)
    x = T.x0
    for p in range(0, 6):
        x = left_inv(x)
        assert lat.a_prime[p] == pytest.approx(x, rel=1e-10)


def test_p_star_by_hand():
    assert p_star(1.01, 0.4603, 1.113) == 8
    assert p_star(1.01, 0.4603, 1.113) == math.floor(1 + math.log(1.01 / 0.4603) / math.log(1.113))


def test_lemma1_on_analytic_family(analytic_map):
    rep = check_lemma1(analytic_map, 1.01)
    assert rep.p_star == 8
    assert rep.check_i and rep.check_ii and rep.check_iii
    assert rep.d10 > 1.01


def test_lemma1_precondition(analytic_map):
    d10 = check_lemma1(analytic_map, 1.01).d10
    with pytest.raises(PreconditionError):
        check_lemma1(analytic_map, d10 + 0.1)


def test_folded_data_rejected(rng):
    x = rng.uniform(0, 1, 40_000)
    y = np.where(x < 0.4, x / 0.4, np.abs(np.sin(6 * x)))
    with pytest.raises((FitError, PreconditionError)):
        build_empirical((x, np.clip(y, 0, 1)))
