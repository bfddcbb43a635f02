import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from manifold_ess.estimator import (
    DegenerateChainError,
    EssReport,
    LagCovariances,
    WindowSpec,
    auto_bandwidth,
    center_gram,
    centered_lags,
    exact_population_ess,
    harmonic_mean_diagnostic,
    kernel_ess,
    lag_covariances,
    lag_covariances_streaming,
    long_run_variance,
    precision_check,
    scalar_ess,
)
from manifold_ess.geometry import Chain, ValidationError, haar_rotation, uniform_sphere
from manifold_ess.kernels import KernelSpec, gram

POISSON = KernelSpec("sphere_poisson", rho=0.75)


def explicit_centering(k):
    n = k.shape[0]
    h = np.eye(n) - np.ones((n, n)) / n
    return h @ k @ h


# ---- windows ---------------------------------------------------------------


@pytest.mark.parametrize("n,b", [(27, 3), (3000, 14), (2500, 13), (26, 2), (64, 4), (63, 3), (10**6, 100), (10**6 - 1, 99)])
def test_auto_bandwidth(n, b):
    assert auto_bandwidth(n) == b
    assert WindowSpec().resolve(n) == b


def test_window_validation():
    with pytest.raises(ValidationError):
        WindowSpec("parzen")
    with pytest.raises(ValidationError):
        WindowSpec(bandwidth=-1)
    with pytest.raises(ValidationError, match="smaller"):
        WindowSpec(bandwidth=10).resolve(10)
    with pytest.raises(ValidationError):
        WindowSpec("custom")
    w = WindowSpec("custom", weights=(0.9, 0.5))
    assert w.resolve(100) == 2
    np.testing.assert_array_equal(w.lag_weights(2), [0.9, 0.5])


def test_bartlett_and_truncated_weights():
    np.testing.assert_allclose(WindowSpec().lag_weights(3), [0.75, 0.5, 0.25])
    np.testing.assert_array_equal(WindowSpec("truncated").lag_weights(3), [1.0, 1.0, 1.0])


# ---- centering and lags ----------------------------------------------------


def test_center_gram_two_points():
    a, b, c = 3.0, 0.5, 2.0
    want = (a - 2 * b + c) / 4 * np.array([[1, -1], [-1, 1]])
    np.testing.assert_allclose(center_gram(np.array([[a, b], [b, c]])), want, atol=1e-15)


def test_center_gram_constant_is_zero():
    assert np.abs(center_gram(np.full((5, 5), 2.5))).max() <= 1e-15


def test_center_gram_matches_explicit_product(rng):
    x = rng.standard_normal((40, 6))
    k = x @ x.T
    kt = center_gram(k)
    np.testing.assert_allclose(kt, explicit_centering(k), atol=1e-12)
    assert np.abs(kt.sum(axis=0)).max() <= 1e-9
    assert np.abs(kt.sum(axis=1)).max() <= 1e-9
    assert np.linalg.eigvalsh(kt)[0] >= -1e-9 * 40 * np.abs(k).max()


def test_lag_covariances_examples():
    lags = lag_covariances(np.eye(4), 2)
    np.testing.assert_array_equal(lags.gammas, [1.0, 0.0, 0.0])
    a, b, c = 3.0, 0.5, 2.0
    lags = lag_covariances(center_gram(np.array([[a, b], [b, c]])), 1)
    np.testing.assert_allclose(lags.gammas, [(a - 2 * b + c) / 4, -(a - 2 * b + c) / 4], atol=1e-15)
    with pytest.raises(ValidationError):
        lag_covariances(np.eye(3), 3)


def test_lag_paths_agree(short_rwmh_chain):
    k = gram(POISSON, short_rwmh_chain).values
    dense = lag_covariances(center_gram(k), 8).gammas
    fast = centered_lags(k, 8).gammas
    stream = lag_covariances_streaming(POISSON, short_rwmh_chain, 8, block=128).gammas
    # explicit superdiagonal means of H K H as the oracle
    kt = explicit_centering(k)
    n = k.shape[0]
    oracle = [sum(kt[t, t + l] for t in range(n - l)) / (n - l) for l in range(9)]
    np.testing.assert_allclose(dense, oracle, atol=1e-12)
    np.testing.assert_allclose(fast, oracle, atol=1e-12)
    np.testing.assert_allclose(stream, oracle, atol=1e-12)


def test_iid_lag_one_vanishes():
    vals = []
    for seed in range(20):
        chain = Chain("sphere", uniform_sphere(5000, 3, np.random.default_rng(1000 + seed)))
        vals.append(centered_lags(gram(POISSON, chain).values, 1).gammas[1])
    vals = np.array(vals)
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(vals.mean()) <= 3 * se


# ---- long-run variance -----------------------------------------------------


def test_long_run_variance_examples():
    assert long_run_variance(LagCovariances(np.array([1.0, 0.0, 0.0]), 10), WindowSpec(bandwidth=2)) == 1.0
    assert long_run_variance(LagCovariances(np.array([1.0, 0.5]), 10), WindowSpec(bandwidth=1)) == 1.5


@pytest.mark.parametrize("r,b", [(0.5, 1), (0.8, 14), (-0.3, 7), (0.95, 40)])
def test_long_run_variance_double_sum(r, b):
    gam = r ** np.arange(b + 1)
    # sum_{|l|<=b} w(|l|/(b+1)) gamma_|l|, written as a double loop over signed lags
    oracle = 0.0
    for l in range(-b, b + 1):
        oracle += (1 - abs(l) / (b + 1)) * gam[abs(l)]
    got = long_run_variance(LagCovariances(gam, 1000), WindowSpec(bandwidth=b))
    assert got == pytest.approx(oracle, abs=1e-12)


# ---- kernel ESS ------------------------------------------------------------


def test_report_identity_and_json(short_rwmh_chain):
    rep = kernel_ess(short_rwmh_chain, POISSON)
    assert rep.status == "ok" and rep.bandwidth == auto_bandwidth(600)
    assert rep.ess * rep.sigma2 == pytest.approx(rep.n * rep.gamma0, rel=1e-9)
    assert rep.tau == pytest.approx(rep.sigma2 / rep.gamma0, rel=1e-15)
    d = json.loads(rep.to_json())
    assert set(d) == {"n", "gamma0", "sigma2", "ess", "tau", "bandwidth", "window", "status"}
    assert EssReport.from_dict(d) == rep


def test_constant_chain_is_degenerate():
    chain = Chain("sphere", np.tile([0.0, 0.0, 1.0], (10, 1)))
    with pytest.raises(DegenerateChainError, match="zero feature variance"):
        kernel_ess(chain, POISSON)


def test_short_chain_rejected():
    with pytest.raises(ValidationError):
        kernel_ess(Chain("sphere", uniform_sphere(3, 3, np.random.default_rng(0))), POISSON)


def test_unsafe_kernel_rejected(short_rwmh_chain):
    spec = KernelSpec("sphere_geodesic_gauss_UNSAFE", h=1.0, unsafe_ok=True)
    with pytest.raises(ValidationError):
        kernel_ess(short_rwmh_chain, spec)


def test_unstable_sigma_is_flagged():
    x = np.array([0.0, 0.0, 1.0])
    chain = Chain("sphere", np.array([x, -x] * 10))
    rep = kernel_ess(chain, POISSON, WindowSpec("truncated", 1))
    assert rep.sigma2 < 0 and rep.status == "unstable_sigma"
    assert rep.ess is None and rep.tau is None
    with pytest.raises(ValidationError):
        precision_check(rep, 0.1)


def test_rotation_and_reversal_invariance(short_rwmh_chain, rng):
    rep = kernel_ess(short_rwmh_chain, POISSON)
    for _ in range(5):
        rot = kernel_ess(short_rwmh_chain.rotated(haar_rotation(3, rng)), POISSON)
        for f in ("gamma0", "sigma2", "ess", "tau"):
            assert getattr(rot, f) == pytest.approx(getattr(rep, f), rel=1e-12)
    rev = kernel_ess(short_rwmh_chain.reversed(), POISSON)
    for f in ("gamma0", "sigma2", "ess"):
        assert abs(getattr(rev, f) - getattr(rep, f)) <= 1e-12 * max(1.0, abs(getattr(rep, f)))


# ---- exact ESS -------------------------------------------------------------


def test_exact_ess_examples():
    assert exact_population_ess([2.0], 50) == 50.0
    assert exact_population_ess([1.0, -0.5, 0, 0], 4) == pytest.approx(16.0, rel=1e-15)
    with pytest.raises(ValidationError):
        exact_population_ess([0.0, 0.1], 5)
    with pytest.raises(ValidationError, match="negative"):
        exact_population_ess([1.0, -2.0], 5)
    assert exact_population_ess([1.0, -1.0], 2) == np.inf


def test_exact_ess_double_sum():
    n, r, g0 = 100, 0.5, 2.0
    gam = g0 * r ** np.arange(n)
    # E||mean of centered features||^2 = n^-2 sum_s sum_t gamma_|s-t|
    risk = sum(gam[abs(s - t)] for s in range(n) for t in range(n)) / n**2
    assert exact_population_ess(gam, n) == pytest.approx(g0 / risk, rel=1e-12)


# ---- scalar ESS ------------------------------------------------------------


def test_scalar_ess_iid_normal():
    ratios = [scalar_ess(np.random.default_rng(s).standard_normal(10000)).ess / 10000 for s in range(20)]
    assert 0.9 <= np.mean(ratios) <= 1.1


def test_scalar_ess_ar1():
    rng = np.random.default_rng(11)
    n, phi = 50000, 0.5
    e = rng.standard_normal(n)
    y = np.empty(n)
    y[0] = e[0] / np.sqrt(1 - phi**2)
    for t in range(1, n):
        y[t] = phi * y[t - 1] + e[t]
    assert scalar_ess(y).ess / n == pytest.approx((1 - phi) / (1 + phi), abs=0.05)


def test_scalar_ess_constant():
    with pytest.raises(DegenerateChainError):
        scalar_ess(np.full(20, 3.0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100).filter(lambda a: abs(a) > 1e-3), st.floats(-1e3, 1e3))
def test_scalar_ess_affine_invariance(seed, a, c):
    y = np.cumsum(np.random.default_rng(seed).standard_normal(300)) * 0.1 + np.random.default_rng(seed + 1).standard_normal(300)
    base = scalar_ess(y)
    moved = scalar_ess(a * y + c)
    assert moved.ess == pytest.approx(base.ess, rel=1e-10)


def test_scalar_ess_scale_by_five(rng):
    y = rng.standard_normal(500)
    assert scalar_ess(5 * y).ess == pytest.approx(scalar_ess(y).ess, rel=1e-12)


# ---- harmonic-mean identity -----------------------------------------------


def test_harmonic_mean_identity_rwmh(short_rwmh_chain):
    rep = harmonic_mean_diagnostic(short_rwmh_chain)
    assert rep.relative_gap <= 1e-8
    d = rep.to_dict()
    assert len(d["per_direction"]) == 3


def test_harmonic_mean_single_direction(rng):
    signs = rng.choice([-1.0, 1.0], size=200)
    pts = np.zeros((200, 3))
    pts[:, 0] = signs
    rep = harmonic_mean_diagnostic(Chain("sphere", pts))
    assert rep.eigenvalues.size == 1
    assert rep.weighted_harmonic_mean == pytest.approx(rep.ess[0], rel=1e-8)
    assert rep.relative_gap <= 1e-8


def test_harmonic_mean_iid():
    chain = Chain("sphere", uniform_sphere(5000, 3, np.random.default_rng(8)))
    rep = harmonic_mean_diagnostic(chain)
    assert np.all((rep.ess / 5000 >= 0.8) & (rep.ess / 5000 <= 1.2))


# ---- precision rule ------------------------------------------------------


def test_precision_examples():
    rep = EssReport(1000, 2.0, 10.0, 10)
    res = precision_check(rep, 0.2)
    assert res.risk == pytest.approx(0.01) and res.pass_risk and res.pass_ess
    res = precision_check(rep, 0.05)
    assert not res.pass_risk and not res.pass_ess
    with pytest.raises(ValidationError):
        precision_check(rep, 0.0)


def test_precision_equivalence_random():
    rng = np.random.default_rng(99)
    for _ in range(100):
        rep = EssReport(int(rng.integers(4, 10**5)), float(rng.uniform(0.01, 10)), float(rng.uniform(0.01, 100)), 3)
        res = precision_check(rep, float(rng.uniform(0.001, 1)))
        assert res.pass_risk == res.pass_ess


def test_precision_at_boundary():
    # sigma2 / n == eps^2 exactly in binary: 0.25 / 4 = 0.0625 = 0.25^2
    res = precision_check(EssReport(4, 1.0, 0.25, 1), 0.25)
    assert res.pass_risk and res.pass_ess
