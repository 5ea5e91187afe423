import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad_vec
from scipy.linalg import expm

from noisydiff.model import DiffusionModel, OUSpec, ou_model, bench_ou_spec, BENCH_OU_ALPHA, BENCH_OU_BETA
from noisydiff.simulate import (NoiseSpec, PathConfig, SimulationError, add_noise, ou_transition, psd_sqrt,
                                simulate_latent)


def scalar_ou(kappa=1.0, sigma=1.0, x0=0.0):
    spec = OUSpec(B=[[-kappa]], mu_shift=[0.0], A=[[sigma]], x0=[x0])
    return ou_model(spec=spec), spec


def test_degenerate_sde_gives_constant_path():
    m = DiffusionModel(2, 2, 1, 1, drift=lambda x, b: np.zeros_like(x),
                       diffusion=lambda x, a: np.zeros(x.shape[:-1] + (2, 2)))
    path = simulate_latent(m, [0.0], [0.0], PathConfig(50, 0.1, substeps=3, seed=1), x0=[1.5, -2.0])
    np.testing.assert_array_equal(path, np.tile([1.5, -2.0], (51, 1)))


def test_determinism():
    m = ou_model(spec=bench_ou_spec())
    for exact in (True, False):
        cfg = PathConfig(500, 0.01, substeps=2, seed=42, exact_ou=exact)
        a = simulate_latent(m, BENCH_OU_BETA, BENCH_OU_ALPHA, cfg)
        b = simulate_latent(m, BENCH_OU_BETA, BENCH_OU_ALPHA, cfg)
        np.testing.assert_array_equal(a, b)
    noise = NoiseSpec(np.diag([1e-4, 2e-4]))
    np.testing.assert_array_equal(add_noise(a, noise, 7), add_noise(a, noise, 7))


def test_scalar_ou_stationary_variance():
    m, spec = scalar_ou()
    # nh = 5000; stationary variance sigma^2 / (2 kappa) = 1/2
    X = simulate_latent(m, spec.beta, spec.alpha, PathConfig(200_000, 0.025, seed=5))
    assert X[1000:, 0].var() == pytest.approx(0.5, rel=0.05)


def test_transition_matches_quadrature():
    spec = bench_ou_spec()
    h = 0.3
    F, g, S = ou_transition(spec, h)
    C = spec.A @ spec.A.T
    S_quad, _ = quad_vec(lambda s: expm(spec.B * s) @ C @ expm(spec.B * s).T, 0, h, epsabs=1e-13)
    g_quad, _ = quad_vec(lambda s: expm(spec.B * s) @ spec.mu_shift, 0, h, epsabs=1e-13)
    np.testing.assert_allclose(F, expm(spec.B * h), rtol=1e-12)
    np.testing.assert_allclose(S, S_quad, rtol=1e-9)
    np.testing.assert_allclose(g, g_quad, rtol=1e-9)


def test_singular_drift_matrix_is_brownian():
    with pytest.warns(RuntimeWarning):
        spec = OUSpec(B=np.zeros((2, 2)), mu_shift=[0.5, 0.0], A=np.eye(2), x0=[0, 0])
    F, g, S = ou_transition(spec, 0.1)
    np.testing.assert_allclose(F, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(g, [0.05, 0.0], atol=1e-15)
    np.testing.assert_allclose(S, 0.1 * np.eye(2), atol=1e-15)


def test_euler_and_exact_agree_in_distribution():
    spec = bench_ou_spec()
    m = ou_model(spec=spec)
    M, n, h = 400, 20, 0.1
    finals = {}
    for exact in (True, False):
        rows = []
        for r in range(M):
            cfg = PathConfig(n, h, substeps=4, seed=10_000 * exact + r, exact_ou=exact)
            rows.append(simulate_latent(m, spec.beta, spec.alpha, cfg)[-1])
        finals[exact] = np.array(rows)
    a, b = finals[True], finals[False]
    se_mean = np.sqrt(a.var(0, ddof=1) / M + b.var(0, ddof=1) / M)
    assert np.all(np.abs(a.mean(0) - b.mean(0)) <= 3 * se_mean)
    # variance of the sample variance of Gaussian data: 2 s^4 / (M - 1)
    va, vb = a.var(0, ddof=1), b.var(0, ddof=1)
    se_var = np.sqrt(2 * va ** 2 / (M - 1) + 2 * vb ** 2 / (M - 1))
    assert np.all(np.abs(va - vb) <= 3 * se_var)


def test_explosion_is_reported():
    m = DiffusionModel(1, 1, 1, 1, drift=lambda x, b: x ** 3, diffusion=lambda x, a: np.ones(x.shape + (1,)))
    with pytest.raises(SimulationError, match="exploded"), np.errstate(over="ignore", invalid="ignore"):
        simulate_latent(m, [0.0], [0.0], PathConfig(1000, 0.5, substeps=1), x0=[3.0])


def test_zero_noise_is_identity():
    X = np.random.default_rng(0).normal(size=(30, 2))
    np.testing.assert_array_equal(add_noise(X, NoiseSpec(np.zeros((2, 2))), 1), X)


def test_unit_noise_covariance():
    n = 200_000
    Y = add_noise(np.zeros((n, 2)), NoiseSpec(np.eye(2)), 3)
    assert np.all(np.abs(np.cov(Y.T) - np.eye(2)) <= 3 / np.sqrt(n))


def test_small_noise_setting():
    noise = NoiseSpec(1e-4 * np.eye(2))
    Y = add_noise(np.zeros((100_000, 2)), noise, 11)
    np.testing.assert_allclose(np.cov(Y.T), 1e-4 * np.eye(2), atol=3e-4 / np.sqrt(100_000) * 3)


@pytest.mark.parametrize("dist,m4", [("gaussian", 3.0), ("scaled_uniform", 1.8), ("scaled_rademacher", 1.0)])
def test_noise_distributions_standardised(dist, m4):
    spec = NoiseSpec(np.eye(1), dist)
    eps = spec.draw(np.random.default_rng(2), (400_000, 1))
    assert abs(eps.mean()) < 0.01
    assert eps.var() == pytest.approx(1.0, abs=0.01)
    assert (eps ** 4).mean() == pytest.approx(m4, rel=0.03)
    assert spec.fourth_moment_per_component[0] == m4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9), st.floats(0, 1))
def test_psd_root_squares_back(entries, rank_cut):
    G = np.array(entries).reshape(3, 3)
    L = G @ G.T
    if rank_cut > 0.5:
        w, Q = np.linalg.eigh(L)
        w[0] = 0.0
        L = (Q * w) @ Q.T
        L = 0.5 * (L + L.T)
    R = psd_sqrt(L)
    np.testing.assert_allclose(R, R.T, atol=1e-12)
    np.testing.assert_allclose(R @ R, L, atol=1e-10 * (1 + np.abs(L).max()))


def test_psd_root_rejects_indefinite():
    with pytest.raises(ValueError):
        psd_sqrt(np.diag([1.0, -1e-6]))
    psd_sqrt(np.diag([1.0, -1e-13]))
