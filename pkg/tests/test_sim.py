"""Data-generating process checks against model-implied moments."""

from __future__ import annotations

import numpy as np
import pytest

from ddfm import echelon as ech
from ddfm import sim
from conftest import make_model


def test_noiseless_static_data_lies_in_loading_span():
    model = make_model((1, 1), n=6, seed=120)
    # static loadings: kill the lag-1 coefficients of d and the VAR part
    d = np.zeros((1, 6, 2))
    d[0] = model.d.coeff(0)
    c = np.zeros((2, 2, 2))
    c[0] = np.eye(2)
    static = ech.RmfdModel(c=ech.PolyMatrix(c), d=ech.PolyMatrix(d), gamma=model.gamma)
    spec = sim.DgpSpec(model=static, sigma_eps=np.eye(2), sigma_xi=0.0, T=100, seed=1)
    X, factors, shocks = sim.simulate(spec)
    d0 = static.d.coeff(0)
    proj = d0 @ np.linalg.pinv(d0)
    assert np.max(np.abs(X - X @ proj.T)) < 1e-10


def test_fixed_seed_bit_identical():
    model = make_model((1, 1), n=5, seed=121)
    spec = sim.DgpSpec(model=model, sigma_eps=np.eye(2), sigma_xi=0.2, T=50, seed=7)
    X1, f1, u1 = sim.simulate(spec)
    X2, f2, u2 = sim.simulate(spec)
    assert np.array_equal(X1, X2)
    assert np.array_equal(f1, f2)
    assert np.array_equal(u1, u2)


def test_sample_covariance_matches_model_implied():
    model = make_model((1, 1), n=8, seed=122, scale=0.5)
    Se = np.eye(2) + 0.3
    sx = 0.25
    spec = sim.DgpSpec(model=model, sigma_eps=Se, sigma_xi=sx, T=50000, seed=3)
    X, _, _ = sim.simulate(spec)
    k = ech.irf_rmfd(model, 120).coeffs
    Sigma_x = sum(k[j] @ Se @ k[j].T for j in range(len(k))) + sx * np.eye(8)
    sample = X.T @ X / X.shape[0]
    rel = np.max(np.abs(sample - Sigma_x)) / np.max(np.abs(Sigma_x))
    assert rel < 0.02


def test_leading_eigenvalues_dominate_across_sample_ladder():
    model = make_model((1, 1), n=12, seed=123, scale=0.6)
    shares = []
    for T in (300, 3000):
        spec = sim.DgpSpec(model=model, sigma_eps=np.eye(2), sigma_xi=0.0, T=T, seed=5)
        X, _, _ = sim.simulate(spec)
        w = np.linalg.eigvalsh(X.T @ X / T)[::-1]
        shares.append(w[:4].sum() / w.sum())
    assert shares[0] > 0.95 and shares[1] > 0.95


def test_simulation_rejects_unstable_or_short():
    model = make_model((1, 1), n=4, seed=124)
    c = np.array(model.c.coeffs)
    c[1] = -np.eye(2) * 1.2  # explosive VAR
    bad = ech.RmfdModel(c=ech.PolyMatrix(c), d=model.d, gamma=model.gamma)
    with pytest.raises(sim.SimulationError):
        sim.simulate(sim.DgpSpec(model=bad, sigma_eps=np.eye(2), sigma_xi=0.1, T=50, seed=1))
    with pytest.raises(sim.SimulationError):
        sim.DgpSpec(model=model, sigma_eps=np.eye(2), sigma_xi=0.1, T=50, burn_in=10)


def test_random_canonical_model_is_canonical_and_stable():
    for seed in range(25):
        gamma = [(1, 1), (1, 2, 2), (2, 2)][seed % 3]
        model = sim.random_canonical_model(gamma, n=6, seed=seed)
        assert model.is_canonical()
        ss = ech.assemble_statespace(model, np.eye(model.q), 1.0)
        from ddfm.kalman import spectral_radius

        assert spectral_radius(ss.A) < 0.95
