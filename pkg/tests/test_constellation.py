import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlshape.constellation import (
    ConvergenceError,
    EnergyNormalizationError,
    Pmf,
    boltzmann_pmf,
    energy,
    entropy,
    is_product,
    kl_divergence,
    make_square_qam,
    marginals,
    mb_nu_from_lambda,
    mb_pmf,
    moments,
    nearest_product_pmf,
    normalize_energy,
    normalized_moments,
    orbit_index,
    read_pmf,
    symmetrize,
    uniform_pmf,
    write_pmf,
)

BITS = st.sampled_from([2, 4, 6, 8])


def _random_pmf(draw_seed, M, symmetric=False):
    r = np.random.default_rng(draw_seed)
    p = Pmf.from_weights(r.dirichlet(np.full(M, 0.7)))
    return symmetrize(p) if symmetric else p


# -- geometry ---------------------------------------------------------------


@pytest.mark.parametrize("m", [2, 4, 6, 8])
def test_square_qam_is_unit_energy_odd_grid(m):
    c = make_square_qam(m)
    assert c.size == 2**m
    assert energy(c, uniform_pmf(c.size)) == pytest.approx(1.0, abs=1e-12)
    grid = c.points / np.min(np.abs(c.points.real))
    assert np.allclose(grid.real % 2, 1) and np.allclose(grid.imag % 2, 1)


@pytest.mark.parametrize("m", [0, 1, 3, 5, 10])
def test_square_qam_rejects_bad_order(m):
    with pytest.raises(ValueError):
        make_square_qam(m)


def test_qpsk_is_constant_modulus():
    c = make_square_qam(2)
    assert moments(c, uniform_pmf(4)) == pytest.approx((1.0, 1.0), abs=1e-14)


@pytest.mark.parametrize("m, mu4, mu6", [(6, 1.3810, 2.2258), (8, 1.3953, 2.2922)])
def test_uniform_moments_match_published_tables(m, mu4, mu6):
    c = make_square_qam(m)
    got = moments(c, uniform_pmf(c.size))
    assert got == pytest.approx((mu4, mu6), abs=5e-5)


def test_moments_reject_unnormalized(qam):
    c = qam[6].scaled(1.01)
    with pytest.raises(EnergyNormalizationError):
        moments(c, uniform_pmf(64))


def test_moments_extended_precision_oracle(qam):
    # Gaussian-like weights on 64QAM, moments recomputed in 50-digit arithmetic
    c = qam[6]
    a2 = np.abs(c.points) ** 2
    w = np.exp(-0.9 * a2 + 0.05 * a2**2 / a2.max())
    p = Pmf.from_weights(w)
    mpmath.mp.dps = 50
    W = [mpmath.mpf(float(x)) for x in w]
    A = [mpmath.mpf(float(x)) for x in a2]
    Z = mpmath.fsum(W)
    E = mpmath.fsum(wi * ai for wi, ai in zip(W, A)) / Z
    m4 = mpmath.fsum(wi * ai**2 for wi, ai in zip(W, A)) / Z / E**2
    m6 = mpmath.fsum(wi * ai**3 for wi, ai in zip(W, A)) / Z / E**3
    got = normalized_moments(c, p)
    assert got[0] == pytest.approx(float(m4), rel=1e-13)
    assert got[1] == pytest.approx(float(m6), rel=1e-13)


# -- PMF type ---------------------------------------------------------------


def test_pmf_rejects_bad_vectors():
    with pytest.raises(ValueError):
        Pmf(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        Pmf(np.array([1.5, -0.5]))
    with pytest.raises(ValueError):
        Pmf(np.array([np.nan, 1.0]))
    with pytest.raises(ValueError):
        Pmf(np.array([0.7, 0.1, 0.1, 0.1]), symmetric=True)


def test_pmf_is_immutable():
    p = uniform_pmf(16)
    with pytest.raises(ValueError):
        p.probs[0] = 0.5


@given(seed=st.integers(0, 2**31), m=st.sampled_from([4, 6, 8]))
def test_symmetrize_gives_exact_quadrant_symmetry(seed, m):
    M = 2**m
    q = _random_pmf(seed, M, symmetric=True)
    assert q.symmetric
    labels, reps = orbit_index(M)
    assert np.all(np.bincount(labels) == 4)
    assert np.array_equal(labels[reps], np.arange(M // 4))
    # orbit mass preserved
    p = _random_pmf(seed, M)
    assert np.allclose(np.bincount(labels, p.probs), np.bincount(labels, symmetrize(p).probs), atol=1e-15)


@given(seed=st.integers(0, 2**31), m=BITS)
def test_normalize_energy_gives_unit_energy(seed, m):
    c = make_square_qam(m)
    p = _random_pmf(seed, c.size)
    assert energy(normalize_energy(c, p), p) == pytest.approx(1.0, abs=1e-12)


@given(seed=st.integers(0, 2**31), m=BITS)
def test_moments_satisfy_cauchy_schwarz(seed, m):
    c = make_square_qam(m)
    mu4, mu6 = normalized_moments(c, _random_pmf(seed, c.size))
    assert 1.0 - 1e-12 <= mu4 and mu4**2 <= mu6 * (1 + 1e-12)


# -- entropy / KL -----------------------------------------------------------


def test_entropy_reference_values():
    assert entropy(uniform_pmf(64)) == pytest.approx(6.0, abs=1e-12)
    assert entropy(Pmf(np.eye(16)[3])) == 0.0
    assert entropy(Pmf(np.array([0.5, 0.5, 0.0, 0.0]))) == pytest.approx(1.0, abs=1e-15)


def test_kl_hand_summation():
    # sum 1/4 log2((1/4)/q) = (-1 + 0 + 1 + 1)/4
    p, q = uniform_pmf(4), Pmf(np.array([0.5, 0.25, 0.125, 0.125]))
    assert kl_divergence(p, q) == pytest.approx(0.25, abs=1e-15)
    assert kl_divergence(p, p) == 0.0
    with pytest.raises(ValueError):
        kl_divergence(p, Pmf(np.array([0.5, 0.5, 0.0, 0.0])))


@given(s1=st.integers(0, 2**31), s2=st.integers(0, 2**31))
def test_kl_nonnegative(s1, s2):
    p, q = _random_pmf(s1, 16), _random_pmf(s2, 16)
    assert kl_divergence(p, q) >= 0.0


# -- product PMFs -----------------------------------------------------------


def test_nearest_product_of_product_is_identity(rng):
    a, b = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
    p = Pmf(np.outer(b, a).ravel())
    assert is_product(p)
    q = nearest_product_pmf(p)
    assert np.allclose(q.probs, p.probs, atol=1e-15)
    assert kl_divergence(p, q) == pytest.approx(0.0, abs=1e-12)
    u = nearest_product_pmf(uniform_pmf(64))
    assert np.allclose(u.probs, 1 / 64, atol=1e-16)


def test_nearest_product_beats_random_products(rng):
    # quadrant-symmetric, non-product: mass on one diagonal orbit
    c = make_square_qam(4)
    w = np.exp(-np.abs(c.points) ** 2) + 2.0 * (np.abs(c.points.real * c.points.imag) > 0.5)
    p = symmetrize(Pmf.from_weights(w))
    assert not is_product(p)
    best = kl_divergence(p, nearest_product_pmf(p))
    for _ in range(100):
        a, b = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        assert best <= kl_divergence(p, Pmf(np.outer(b, a).ravel())) + 1e-12


def test_nearest_product_rejects_non_square():
    with pytest.raises(ValueError):
        nearest_product_pmf(uniform_pmf(8))
    with pytest.raises(ValueError):
        marginals(uniform_pmf(32))


# -- Maxwell-Boltzmann ------------------------------------------------------


def test_mb_zero_is_uniform(qam):
    assert np.array_equal(mb_pmf(qam[6], 0.0).probs, uniform_pmf(64).probs)


def test_mb_large_nu_collapses_to_inner_ring(qam):
    p = mb_pmf(qam[6], 40.0)
    inner = np.isclose(np.abs(qam[6].points), np.abs(qam[6].points).min())
    assert inner.sum() == 4
    assert np.allclose(p.probs[inner], 0.25, atol=1e-6)


def test_mb_rejects_negative_nu(qam):
    with pytest.raises(ValueError):
        mb_pmf(qam[4], -0.1)


@given(nu=st.floats(0.0, 5.0), m=BITS)
def test_mb_is_self_consistent_and_symmetric(nu, m):
    c = make_square_qam(m)
    p = mb_pmf(c, nu)
    assert p.symmetric
    cn = normalize_energy(c, p)
    a2 = np.abs(cn.points) ** 2
    ref = np.exp(-nu * (a2 - a2.min()))
    assert np.abs(ref / ref.sum() - p.probs).sum() < 1e-9


def test_mb_nu_lambda_roundtrip(qam):
    c = qam[6]
    for lam in (0.0, 0.1, 0.5, 2.0):
        nu = mb_nu_from_lambda(c, lam)
        assert np.allclose(mb_pmf(c, nu).probs, boltzmann_pmf(c, lam).probs, atol=1e-10)


@pytest.mark.parametrize("m", [4, 6, 8])
def test_mb_entropy_nonincreasing(m):
    c = make_square_qam(m)
    h = [entropy(mb_pmf(c, nu)) for nu in np.linspace(0, 8, 81)]
    assert np.all(np.diff(h) <= 1e-12)


@pytest.mark.parametrize("m", [6, 8])
def test_mb_moments_grow_toward_gaussian(m):
    # from uniform (mu4 ~ 1.38) toward the Gaussian values (2, 6) while the
    # distribution is still wide; see the project notes on the monotonicity direction
    c = make_square_qam(m)
    mom = np.array([normalized_moments(c, mb_pmf(c, nu)) for nu in np.linspace(0, 0.95, 40)])
    assert np.all(np.diff(mom[:, 0]) > 0) and np.all(np.diff(mom[:, 1]) > 0)


def test_mb_at_published_entropy_is_near_published_moments(qam):
    # consistency check only: the published nu is not stated
    from scipy.optimize import brentq

    c = qam[6]
    nu = brentq(lambda v: entropy(mb_pmf(c, v)) - 5.7529, 0.0, 3.0)
    mu4, mu6 = normalized_moments(c, mb_pmf(c, nu))
    assert abs(mu4 - 1.6158) < 0.02 and abs(mu6 - 3.2676) < 0.06


def test_mb_nonconvergence_raised(qam):
    with pytest.raises(ConvergenceError):
        mb_pmf(qam[8], 1.0, tol=0.0, max_iter=3)


# -- file format ------------------------------------------------------------


@given(seed=st.integers(0, 2**31), m=BITS, sym=st.booleans())
def test_pmf_file_roundtrip(tmp_path_factory, seed, m, sym):
    c = make_square_qam(m)
    p = _random_pmf(seed, c.size, symmetric=sym)
    path = tmp_path_factory.mktemp("pmf") / "p.pmf"
    write_pmf(path, c, p)
    c2, q = read_pmf(path)
    assert q.symmetric == sym
    assert np.allclose(q.probs, p.probs, rtol=1e-10, atol=1e-12)
    assert np.allclose(c2.points, c.points)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# m={m} sym={int(sym)}" and len(lines) == c.size + 1


def test_pmf_file_clamps_tiny_probs(tmp_path):
    c = make_square_qam(2)
    p = Pmf(np.array([0.5 - 1e-14, 0.5, 1e-14, 0.0]))
    write_pmf(tmp_path / "p.pmf", c, p)
    _, q = read_pmf(tmp_path / "p.pmf")
    assert q.probs[2] == 0.0 and math.isclose(q.probs.sum(), 1.0)


def test_pmf_file_rejects_wrong_geometry(tmp_path):
    c = make_square_qam(4)
    write_pmf(tmp_path / "p.pmf", c, uniform_pmf(16))
    lines = (tmp_path / "p.pmf").read_text().splitlines()
    lines[1] = "5 5 0.0625"
    (tmp_path / "bad.pmf").write_text("\n".join(lines))
    with pytest.raises(ValueError):
        read_pmf(tmp_path / "bad.pmf")
