"""Constrained M-step against a dense-Kronecker oracle; EM loop contracts."""

from __future__ import annotations

import numpy as np
import pytest

from ddfm import echelon as ech
from ddfm import em, kalman, sim
from conftest import dense_gls_oracle, make_model, random_statespace


def _moments_from_simulation(gamma, n, T, seed, s_cap=None, p_cap=None):
    model = make_model(gamma, n=n, seed=seed, s_cap=s_cap, p_cap=p_cap)
    q = model.q
    Se = np.eye(q) + 0.25
    spec = sim.DgpSpec(model=model, sigma_eps=Se, sigma_xi=0.4, T=T, seed=seed)
    X, _, _ = sim.simulate(spec)
    ss = ech.assemble_statespace(model, Se, 0.4)
    fo = kalman.filter(ss, X)
    so = kalman.smooth(ss, fo, X)
    return model, ss, kalman.smoothed_moments(ss, so, fo, X)


def test_mstep_unrestricted_loading_is_ols(rng):
    # a fully free template (H = I, h = 0) must reproduce the OLS solution
    # vec(M_sx' M_ss^{-1}) regardless of the scalar noise level
    m, n = 3, 5
    rows, cols = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    template = ech.RestrictionTemplate(
        target_shape=(n, m),
        free_rows=rows.ravel(),
        free_cols=cols.ravel(),
        fixed=np.zeros((n, m)),
    )
    root = rng.normal(size=(m, m))
    M_ss = root @ root.T + m * np.eye(m)
    M_sx = rng.normal(size=(m, n))
    mom = kalman.SmoothedMoments(
        M_ss=M_ss, M_sx=M_sx, M_s1s1=M_ss, M_s1s=M_ss,
        sigma_xi_new=1.0, sigma_eps_new=np.eye(2), T=50,
    )
    empty = ech.RestrictionTemplate(
        target_shape=(m, m),
        free_rows=np.zeros(0, dtype=int),
        free_cols=np.zeros(0, dtype=int),
        fixed=np.zeros((m, m)),
    )
    _, theta_C = em.m_step(mom, empty, template, np.eye(2), 0.37)
    want = (M_sx.T @ np.linalg.inv(M_ss))[template.free_rows, template.free_cols]
    assert np.max(np.abs(theta_C - want)) < 1e-10


def test_mstep_everything_fixed_returns_empty(rng):
    n, m = 4, 2
    template = ech.RestrictionTemplate(
        target_shape=(n, m),
        free_rows=np.zeros(0, dtype=int),
        free_cols=np.zeros(0, dtype=int),
        fixed=np.ones((n, m)),
    )
    mom = kalman.SmoothedMoments(
        M_ss=np.eye(m), M_sx=rng.normal(size=(m, n)), M_s1s1=np.eye(m),
        M_s1s=np.eye(m), sigma_xi_new=1.0, sigma_eps_new=np.eye(2), T=10,
    )
    theta_A, theta_C = em.m_step(mom, template_A=template_empty(m), template_C=template,
                                 sigma_eps=np.eye(2), sigma_xi=1.0)
    assert theta_C.size == 0
    assert np.array_equal(template.reconstruct(theta_C), np.ones((n, m)))


def template_empty(m):
    return ech.RestrictionTemplate(
        target_shape=(m, m),
        free_rows=np.zeros(0, dtype=int),
        free_cols=np.zeros(0, dtype=int),
        fixed=np.zeros((m, m)),
    )


def test_mstep_matches_dense_kronecker_oracle():
    for seed in range(20):
        gamma = [(1, 1), (1, 2), (2, 2), (1, 1, 2)][seed % 4]
        caps = [(None, None), (1, max(gamma))][seed % 2]
        model, ss, mom = _moments_from_simulation(
            gamma, n=6, T=200, seed=400 + seed, s_cap=caps[0], p_cap=caps[1]
        )
        q = model.q
        tC, tA, _ = ech.build_templates(
            gamma, n=6, s_cap=caps[0], p_cap=caps[1]
        )
        m = tA.target_shape[0]
        sigma_eps = np.array(ss.sigma_eps)
        sigma_xi = 0.73
        theta_A, theta_C = em.m_step(mom, tA, tC, sigma_eps, sigma_xi)

        W_C = np.eye(6) / sigma_xi
        want_C = dense_gls_oracle(mom.M_ss, W_C, mom.M_sx, tC)
        assert np.max(np.abs(theta_C - want_C)) < 1e-8

        B = np.zeros((m, q))
        B[:q] = np.eye(q)
        W_A = B @ np.linalg.inv(sigma_eps) @ B.T
        want_A = dense_gls_oracle(mom.M_s1s1, W_A, mom.M_s1s, tA)
        assert np.max(np.abs(theta_A - want_A)) < 1e-8


def test_mstep_local_minimum_property(rng):
    # the GLS solution must beat random perturbations on the weighted
    # expected residual criterion
    model, ss, mom = _moments_from_simulation((1, 1), n=5, T=300, seed=77)
    tC, tA, _ = ech.build_templates((1, 1), n=5)
    theta_A, theta_C = em.m_step(mom, tA, tC, np.array(ss.sigma_eps), 0.4)

    def crit_C(theta):
        C = tC.reconstruct(theta)
        return np.trace(C @ mom.M_ss @ C.T) - 2.0 * np.trace(C @ mom.M_sx)

    def crit_A(theta):
        A = tA.reconstruct(theta)
        W = ss.B @ np.linalg.inv(ss.sigma_eps) @ ss.B.T
        return np.trace(W @ A @ mom.M_s1s1 @ A.T) - 2.0 * np.trace(W @ A @ mom.M_s1s)

    base_C, base_A = crit_C(theta_C), crit_A(theta_A)
    for _ in range(1000):
        assert crit_C(theta_C + rng.normal(scale=1e-3, size=theta_C.size)) >= base_C - 1e-12
        assert crit_A(theta_A + rng.normal(scale=1e-3, size=theta_A.size)) >= base_A - 1e-12


def test_mstep_reports_singular_normal_matrix():
    tC, tA, _ = ech.build_templates((1, 1), n=4)
    m = 4
    mom = kalman.SmoothedMoments(
        M_ss=np.zeros((m, m)), M_sx=np.zeros((m, 4)), M_s1s1=np.zeros((m, m)),
        M_s1s=np.zeros((m, m)), sigma_xi_new=1.0, sigma_eps_new=np.eye(2), T=10,
    )
    with pytest.raises(em.EstimationError, match="singular"):
        em.m_step(mom, tA, tC, np.eye(2), 1.0)


def _simulated_setup(seed, n=20, T=1000, gamma=(1, 1), snr_sigma_xi=0.2):
    truth = make_model(gamma, n=n, seed=seed, scale=0.5, radius=0.6)
    Se = np.eye(len(gamma))
    spec = sim.DgpSpec(model=truth, sigma_eps=Se, sigma_xi=snr_sigma_xi, T=T, seed=seed)
    X, _, _ = sim.simulate(spec)
    init_ss = ech.assemble_statespace(truth, Se * 2.0, snr_sigma_xi * 4)
    return truth, X, init_ss


def test_em_monotone_and_recovers_truth():
    truth, X, init_ss = _simulated_setup(seed=501)
    model, Se, sx, tr = em.em_estimate(X, (1, 1), init=init_ss, opts=em.EmOptions(max_iter=400))
    ll = np.array(tr.loglik)
    assert np.all(ll[1:] >= ll[:-1] - 1e-8 * np.abs(ll[:-1]))
    k_t = ech.irf_rmfd(truth, 10).coeffs
    k_e = ech.irf_rmfd(model, 10).coeffs
    assert np.max(np.abs(k_t - k_e)) < 0.15


def test_em_single_iteration_is_two_step(rng):
    truth, X, init_ss = _simulated_setup(seed=502, T=300)
    model, Se, sx, tr = em.em_estimate(
        X, (1, 1), init=init_ss, opts=em.EmOptions(max_iter=1)
    )
    assert tr.iterations == 1
    assert not tr.converged
    # the returned parameters are exactly one E+M pass from the init
    fo = kalman.filter(init_ss, X)
    so = kalman.smooth(init_ss, fo, X)
    mom = kalman.smoothed_moments(init_ss, so, fo, X)
    T = X.shape[0]
    sx_want = max(mom.sigma_xi_new, 1e-8)
    Se_want = mom.sigma_eps_new * (T / (T - 1.0))
    tC, tA, _ = ech.build_templates((1, 1), n=X.shape[1])
    theta_A, theta_C = em.m_step(mom, tA, tC, Se_want, sx_want)
    assert np.allclose(sx, sx_want)
    assert np.allclose(Se, Se_want)
    want_c1 = -tA.reconstruct(theta_A)[:2, :2]
    assert np.allclose(model.c.coeff(1), want_c1)
    assert np.allclose(model.d.coeff(0), tC.reconstruct(theta_C)[:, :2])


def test_em_constraint_preservation():
    truth, X, init_ss = _simulated_setup(seed=503, T=300)
    model, Se, sx, tr = em.em_estimate(
        X, (1, 1), init=init_ss, opts=em.EmOptions(max_iter=25, tol=1e-12)
    )
    assert model.is_canonical(atol=0.0)  # fixed entries bit-exact
    assert np.array_equal(model.c.coeff(0), np.eye(2))
    assert np.array_equal(model.d.coeff(0)[:2], np.eye(2))


def test_em_scale_equivariance():
    truth, X, init_ss = _simulated_setup(seed=504, T=400)
    lam = 3.0
    o = em.EmOptions(max_iter=40, tol=1e-13)
    m1, Se1, sx1, _ = em.em_estimate(X, (1, 1), init=init_ss, opts=o)
    init2 = ech.StateSpaceModel(
        A=init_ss.A, B=init_ss.B, C=init_ss.C,
        sigma_eps=np.asarray(init_ss.sigma_eps) * lam**2,
        sigma_xi=init_ss.sigma_xi * lam**2,
    )
    m2, Se2, sx2, _ = em.em_estimate(X * lam, (1, 1), init=init2, opts=o)
    assert np.allclose(m1.c.coeffs, m2.c.coeffs, atol=1e-6)
    assert np.allclose(m2.d.coeffs, m1.d.coeffs, atol=1e-6)
    assert np.allclose(Se2, Se1 * lam**2, rtol=1e-5)
    k1 = ech.irf_rmfd(m1, 5).coeffs
    k2 = ech.irf_rmfd(m2, 5).coeffs
    assert np.allclose(k2, k1, atol=1e-6)


def test_em_rejects_bad_inputs():
    truth, X, init_ss = _simulated_setup(seed=505, T=200)
    with pytest.raises(em.EstimationError, match="weakly increasing"):
        em.em_estimate(X, (2, 1), init=init_ss)
    with pytest.raises(em.EstimationError, match="complete"):
        Xm = X.copy()
        Xm[0, 0] = np.nan
        em.em_estimate(Xm, (1, 1), init=init_ss)
    bad = ech.StateSpaceModel(
        A=np.full((4, 4), 0.1), B=init_ss.B, C=init_ss.C,
        sigma_eps=init_ss.sigma_eps, sigma_xi=init_ss.sigma_xi,
    )
    with pytest.raises(em.EstimationError, match="pattern"):
        em.em_estimate(X, (1, 1), init=bad)


def test_stabilize_companion_preserves_pattern():
    tC, tA, _ = ech.build_templates((1, 2), n=3)
    rng = np.random.default_rng(1)
    A = tA.reconstruct(rng.normal(scale=3.0, size=tA.free_count))
    out = em.stabilize_companion(A, q=2)
    assert kalman.spectral_radius(out) < 0.995
    assert np.array_equal(out == 0, A == 0)
    assert np.allclose(out[2:, :4], A[2:, :4])


def test_result_serialization_roundtrip():
    truth, X, init_ss = _simulated_setup(seed=506, T=200)
    model, Se, sx, tr = em.em_estimate(
        X, (1, 1), init=init_ss, opts=em.EmOptions(max_iter=5)
    )
    import json

    payload = json.loads(em.result_to_json(model, Se, sx, tr))
    assert payload["converged"] == tr.converged
    assert payload["iterations"] == tr.iterations
    assert np.allclose(payload["sigma_eps"], Se)
    back = ech.RmfdModel.from_json(json.dumps(payload))
    assert back.c.allclose(model.c)
