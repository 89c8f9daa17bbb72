import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lorenz_cusp.cuspmap import build_lattice
from lorenz_cusp.density import Grid, histogram_density, l1_distance
from lorenz_cusp.errors import DepthError, PreconditionError
from lorenz_cusp.inducing import (build_cylinders, cylinder_masses, encode, first_return_map,
                                  geometric_tail, grammar_violations, induced_density,
                                  pianigiani_reconstruct, resolvable_depth, return_time_stats,
                                  total_variation)


@pytest.fixture(scope="module")
def lattice(analytic_map):
    return build_lattice(analytic_map, 60)


@pytest.fixture(scope="module")
def partition(lattice):
    return build_cylinders(lattice, 60)


@pytest.fixture(scope="module")
def reconstruction(analytic_map, lattice):
    rho_hat = induced_density(analytic_map, 4_000_000, 4096, seed=0)
    return pianigiani_reconstruct(analytic_map, rho_hat, Grid(4096), 60, lattice=lattice)


def iterate_until_return(T, x, lo, hi, cap=10_000):
    # plain python oracle, independent of the compiled kernel
    for n in range(1, cap):
        x = float(T(x))
        if lo < x < hi and x != T.x0:
            return x, n
    raise AssertionError("no return")


def test_first_cylinders(lattice, partition):
    z1 = sorted(partition.of_time(1), key=lambda c: c.left)
    assert (z1[0].left, z1[0].right) == (lattice.a0_prime, lattice.b_prime[1])
    assert (z1[1].left, z1[1].right) == (lattice.b[1], lattice.a0)


def test_cylinders_disjoint_and_exhaustive(lattice, partition):
    cyl = sorted(partition.cylinders, key=lambda c: c.left)
    for a, b in zip(cyl[:-1], cyl[1:]):
        assert a.right <= b.left
    covered = sum(c.width for c in cyl)
    gl, gr = partition.gap
    assert covered + (gr - gl) == pytest.approx(lattice.a0 - lattice.a0_prime, abs=1e-12)
    assert gr - gl < 1e-6


def test_cylinder_return_times_brute_force(analytic_map, lattice, partition):
    lo, hi = lattice.a0_prime, lattice.a0
    for c in partition.cylinders:
        if c.p > 8:
            continue
        _, n = iterate_until_return(analytic_map, c.midpoint, lo, hi)
        assert n == c.p
        y, tau = first_return_map(analytic_map, "I", c.midpoint)
        assert tau == c.p


def test_depth_contract(lattice):
    with pytest.raises(DepthError):
        build_cylinders(lattice, 61)


def test_first_return_images(analytic_map, lattice):
    T = analytic_map
    x = 0.5 * (lattice.a0_prime + lattice.b_prime[1])
    y, _ = first_return_map(T, "I", x)
    assert T.x0 < y < lattice.a0
    for l in range(1, 6):
        x = 0.5 * (lattice.b[l + 1] + lattice.b[l])
        y, _ = first_return_map(T, "I", x)
        assert lattice.a0_prime < y < T.x0


def test_first_return_outside_set(analytic_map):
    with pytest.raises(PreconditionError):
        first_return_map(analytic_map, "I", 0.01)


def test_grammar_by_hand():
    assert grammar_violations([0, 3, -2, -1, 0, 0, 2, -1, 0]) == 0
    assert grammar_violations([0, 1, 0, 4, -3, -2, -1, 0]) == 0
    assert grammar_violations([3, -3]) == 1
    assert grammar_violations([-2, 0]) == 1
    assert grammar_violations([0, -1, -1]) == 2


@settings(max_examples=30, deadline=None)
@given(st.floats(0.001, 0.999))
def test_encode_matches_membership_oracle(x):
    from lorenz_cusp.cuspmap import build_analytic
    T = build_analytic()
    lat = build_lattice(T, 200)
    code = encode(T, x, 300, lat)
    assert code.violations() == 0
    y = x
    for s in code.symbols[:40]:
        if s == 0:
            assert lat.a0_prime < y < lat.a0
        elif s > 0:
            assert lat.a[s - 1] <= y < lat.a[s]
        else:
            assert lat.a_prime[-s] < y <= lat.a_prime[-s - 1]
        y = float(T(y))


def test_long_code_has_no_violations(analytic_map, lattice):
    code = encode(analytic_map, 0.2718281828, 10_000)
    assert len(code) == 10_000 and code.violations() == 0


def test_code_after_return_follows_excursion(analytic_map, lattice):
    rng = np.random.default_rng(5)
    for x in rng.uniform(lattice.a0_prime, lattice.a0, 200):
        _, tau = first_return_map(analytic_map, "I", x)
        code = encode(analytic_map, x, tau + 1, lattice).symbols
        assert code[0] == 0 and code[tau] == 0
        if tau > 1:
            # right excursion: n, -(n-1), ..., -1 back to I, with tau = n + 1
            inner = code[1:tau]
            assert np.all(inner != 0)
            assert inner[0] == tau - 1
            assert inner[-1] == (1 if tau == 2 else -1)


def test_return_time_stats(analytic_map):
    st_ = return_time_stats(analytic_map, 100_000, "I", seed=0)
    assert st_.prob.sum() == pytest.approx(1.0)
    assert st_.survival()[0] == 1.0
    assert 0 < st_.tail_ratio < 1
    target = -np.log(1.113) / 0.3095
    assert st_.tail_slope == pytest.approx(target, rel=0.2)


def test_return_times_independent_of_threads(analytic_map):
    a = return_time_stats(analytic_map, 20_000, "I", seed=3, segments=4, threads=1)
    b = return_time_stats(analytic_map, 20_000, "I", seed=3, segments=4, threads=4)
    np.testing.assert_array_equal(a.taus, b.taus)


def test_geometric_tail_on_exact_geometric(rng):
    taus = rng.geometric(0.3, 200_000)
    slope, _ = geometric_tail(taus)
    assert slope == pytest.approx(np.log(0.7), rel=0.03)


def test_total_variation():
    assert total_variation([1, 1, 2], [1, 1, 2]) == 0
    assert total_variation([1, 1], [2, 2]) == pytest.approx(1.0)
    assert total_variation([1, 2], [1, 1]) == pytest.approx(0.5)


def test_reconstruction_normalized(reconstruction):
    assert reconstruction.estimate.mass == pytest.approx(1.0, abs=1e-6)


def test_reconstruction_tower_identity(reconstruction, lattice):
    rec = reconstruction
    masses = rec.cylinder_mass  # masses[p - 1] = mu_I(Z_p)
    for n in range(1, 7):
        lhs = float(rec.estimate.integrate(lattice.a[n - 1], lattice.a[n]))
        assert lhs == pytest.approx(rec.C_r * masses[n], abs=1e-4)


def test_reconstruction_matches_orbit_histogram(analytic_map, reconstruction):
    h = histogram_density(analytic_map, 10_000_000, Grid(4096), seed=4)
    assert l1_distance(reconstruction.estimate, h) < 0.05


def test_kac_lemma(analytic_map, reconstruction, lattice):
    # mean first-return time on I equals 1 / mu(I), mu from an orbit histogram
    st_ = return_time_stats(analytic_map, 200_000, "I", seed=9)
    h = histogram_density(analytic_map, 10_000_000, Grid(4096), seed=10)
    mu_I = float(h.integrate(lattice.a0_prime, lattice.a0))
    assert st_.taus.mean() == pytest.approx(1 / mu_I, rel=0.01)
    assert reconstruction.kac_sum() == pytest.approx(1 / mu_I, rel=0.01)


def test_cylinder_masses_sum_to_one(reconstruction, partition):
    m = cylinder_masses(reconstruction.rho_hat, partition)
    assert m.sum() == pytest.approx(1.0, abs=1e-6)


def test_resolvable_depth(analytic_map, lattice):
    assert resolvable_depth(lattice) == 60
    deep = build_lattice(analytic_map, 120)
    d = resolvable_depth(deep)
    assert d < 120
    build_cylinders(deep, d)
