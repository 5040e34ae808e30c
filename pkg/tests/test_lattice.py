import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdm import lattice
from mdm.lattice import (
    CbcBudgetError,
    LatticeError,
    LatticeRule,
    cbc_construct,
    cbc_criterion,
    g_constant_ratio,
    g_lattice,
    lattice_integrate,
    lattice_points,
    make_rule,
    read_generating_vector,
    shift_averaged_kernel,
    write_generating_vector,
)

SMALL_PRIMES = [3, 5, 7, 11, 13, 17, 19, 23, 29, 31]


def brute_cbc(n, d):
    """Greedy CBC by trying every candidate against the product-form criterion."""
    z = []
    for _ in range(d):
        crit = np.array([cbc_criterion(n, z + [c]) for c in range(1, n)])
        best = crit.min()
        z.append(int(np.flatnonzero(crit <= best + 1e-12 * abs(best))[0]) + 1)
    return z


def double_sum_criterion(n, z):
    k = np.arange(n)[:, None]
    pts = np.mod(k * np.asarray(z)[None, :] / n, 1.0)
    kern = shift_averaged_kernel(pts[:, None, :], pts[None, :, :])
    return math.fsum(kern.ravel()) / n**2 - 12.0 ** (-len(z))


@pytest.mark.parametrize("n", SMALL_PRIMES)
def test_first_component_is_one(n):
    assert cbc_construct(n, 1).tolist() == [1]


@pytest.mark.parametrize("n", SMALL_PRIMES)
def test_cbc_matches_exhaustive_search(n):
    assert cbc_construct(n, 3).tolist() == brute_cbc(n, 3)


def test_cbc_prefix_property():
    z5 = cbc_construct(101, 5)
    assert cbc_construct(101, 3).tolist() == z5[:3].tolist()


@settings(max_examples=30, deadline=None)
@given(n=st.sampled_from(SMALL_PRIMES + [37, 41]), d=st.integers(1, 3), seed=st.integers(0, 10**6))
def test_criterion_product_equals_double_sum(n, d, seed):
    z = np.random.default_rng(seed).integers(1, n, size=d)
    assert cbc_criterion(n, z) == pytest.approx(double_sum_criterion(n, z), rel=1e-12, abs=1e-15)


def test_criterion_one_dimensional_closed_form():
    # d = 1: mean of B2(k/n) is 1/(6 n^2), so e^2 = 1/(12 n^2)
    for n in SMALL_PRIMES:
        t = np.arange(n) / n
        want = (math.fsum(1 + 6 * (t * t - t + 1 / 6)) / n - 1) / 12
        assert cbc_criterion(n, [1]) == pytest.approx(want, rel=1e-13)
        assert cbc_criterion(n, [1]) == pytest.approx(1 / (12 * n * n), rel=1e-12)


def test_cbc_criterion_decreases_with_n():
    vals = [cbc_criterion(n, cbc_construct(n, 3)) for n in [31, 101, 251, 1009]]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_cbc_validation_and_budget():
    with pytest.raises(LatticeError):
        cbc_construct(12, 2)
    with pytest.raises(LatticeError):
        cbc_construct(2, 2)
    with pytest.raises(LatticeError):
        cbc_construct(7, 0)
    with pytest.raises(CbcBudgetError):
        cbc_construct(1000003, 5, budget=10**6)


# --- points and estimates -------------------------------------------------------------------


def test_points_example_n3():
    rule = LatticeRule(3, (1,), np.zeros((1, 1)))
    np.testing.assert_allclose(np.sort(lattice_points(rule, 0)[:, 0]), [-0.5, -1 / 6, 1 / 6],
                               atol=1e-15)


def test_points_diagonal_lattice():
    rule = LatticeRule(5, (1, 1), np.full((1, 2), 0.25))
    p = lattice_points(rule, 0)
    np.testing.assert_array_equal(p[:, 0], p[:, 1])
    np.testing.assert_allclose(np.sort(p[:, 0]), np.sort(np.mod(np.arange(5) / 5 + 0.25, 1) - 0.5),
                               atol=1e-15)


def test_points_inside_box_and_shape():
    rule = make_rule(31, 3, m_shifts=4, seed=2)
    pts = lattice_points(rule)
    assert pts.shape == (4, 31, 3)
    assert np.all((pts >= -0.5) & (pts < 0.5))


def test_constant_integrand_has_zero_rms():
    est, rms = lattice_integrate(make_rule(31, 2, seed=4), lambda x: np.full(x.shape[0], 2.5))
    assert est == pytest.approx(2.5, rel=1e-15)
    assert rms == 0.0


def test_single_shift_has_nan_rms():
    est, rms = lattice_integrate(make_rule(31, 2, m_shifts=1), lambda x: x[:, 0] ** 2)
    assert math.isnan(rms) and math.isfinite(est)


@pytest.mark.parametrize("d", [1, 3, 5])
def test_antithetic_kills_odd_integrands(d):
    rule = make_rule(53, d, m_shifts=8, seed=9, antithetic=True)
    est, _ = lattice_integrate(rule, lambda x: np.prod(x, axis=1) + np.sin(x[:, 0]))
    assert abs(est) <= 1e-15


def test_antithetic_needs_even_shifts():
    with pytest.raises(LatticeError):
        make_rule(7, 2, m_shifts=3, antithetic=True)


def test_reproducible_by_seed():
    a = make_rule(101, 3, seed=123)
    b = make_rule(101, 3, seed=123)
    c = make_rule(101, 3, seed=124)
    np.testing.assert_array_equal(a.shifts, b.shifts)
    assert not np.array_equal(a.shifts, c.shifts)
    f = lambda x: np.exp(np.sum(x, axis=1))
    assert lattice_integrate(a, f) == lattice_integrate(b, f)


def test_error_shrinks_with_n():
    exact = (2 * math.sinh(0.5)) ** 3
    f = lambda x: np.exp(np.sum(x, axis=1))
    res = [lattice_integrate(make_rule(n, 3, seed=1), f) for n in [31, 1009]]
    # single errors fluctuate; the shift-based standard error is the stable quantity
    assert res[1][1] < res[0][1] / 10
    assert all(abs(est - exact) < 5 * rms for est, rms in res)


def test_rule_validation():
    with pytest.raises(LatticeError):
        LatticeRule(7, (0, 1), np.zeros((1, 2)))
    with pytest.raises(LatticeError):
        LatticeRule(7, (1, 8), np.zeros((1, 2)))
    with pytest.raises(LatticeError):
        LatticeRule(7, (1,), np.ones((1, 1)))


# --- G constant --------------------------------------------------------------------------------


def literal_g(card, q):
    q = mpmath.mpf(q)
    inner = (2 * mpmath.zeta(1 / q) / (2 * mpmath.pi**2) ** (1 / (2 * q))
             + mpmath.mpf(12) ** (-1 / (2 * q)))
    return float(2**q * inner ** (q * card))


@pytest.mark.parametrize("q", [0.5, 0.75, 0.9, 0.99])
@pytest.mark.parametrize("card", [1, 2, 3])
def test_g_lattice_literal(card, q):
    assert g_lattice(card, q) == pytest.approx(literal_g(card, q), rel=1e-12)


def test_g_q_half():
    # zeta(2) = pi^2/6: the ratio is 2 (pi^2/6) / (2 pi^2) + 1/12 = 1/4
    assert g_constant_ratio(0.5) == pytest.approx(0.5, rel=1e-14)


@pytest.mark.parametrize("q", [0.4, 1.0])
def test_g_rejects_q(q):
    with pytest.raises(LatticeError):
        g_lattice(1, q)


# --- files ----------------------------------------------------------------------------------------


def test_generating_vector_round_trip(tmp_path):
    z = cbc_construct(101, 4)
    path = tmp_path / "z.txt"
    write_generating_vector(path, 101, z)
    n, back = read_generating_vector(path)
    assert n == 101 and back.tolist() == z.tolist()


@pytest.mark.parametrize("text", ["", "7", "7 3 1 2", "8 1 1"])
def test_generating_vector_file_validation(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(LatticeError):
        read_generating_vector(path)
