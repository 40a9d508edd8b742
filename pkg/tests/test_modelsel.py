"""Candidate enumeration, information criteria and ranked selection."""

from __future__ import annotations

from itertools import product

import numpy as np
import pytest

from ddfm import echelon as ech
from ddfm import em, modelsel as ms, sim
from ddfm import init as dinit
from conftest import make_model


def test_kappa_hat_reference_values():
    assert ms.kappa_hat(8, 4, s_ge_p=False) == 2
    assert ms.kappa_hat(8, 4, s_ge_p=True) == 1
    assert ms.kappa_hat(6, 3, s_ge_p=False) == 2


def test_kappa_hat_degenerate_raises():
    with pytest.raises(ms.ModelSelectionError):
        ms.kappa_hat(4, 4, s_ge_p=True)
    with pytest.raises(ms.ModelSelectionError):
        ms.kappa_hat(3, 4, s_ge_p=False)


def test_enumerate_reference_structure_set():
    cands = ms.enumerate_admissible(4, 8)
    got = [(tuple(c.gamma), c.p, c.s) for c in cands]
    assert got == [
        ((1, 1, 1, 1), 1, 1),
        ((1, 1, 1, 2), 2, 1),
        ((1, 1, 2, 2), 2, 1),
        ((1, 2, 2, 2), 2, 1),
        ((2, 2, 2, 2), 2, 1),
    ]
    assert all(c.state_dim == 8 for c in cands)


def test_enumerate_small_cases():
    got = [(tuple(c.gamma), c.p, c.s) for c in ms.enumerate_admissible(1, 2)]
    assert got == [((1,), 1, 1), ((2,), 2, 1)]
    got = [(tuple(c.gamma), c.p, c.s) for c in ms.enumerate_admissible(2, 2)]
    assert got == [((1, 1), 1, 1)]


def test_enumerate_matches_bruteforce_filter():
    # oracle: filter the full grid {1..kappa}^q by the stated predicates
    for q, r in [(2, 4), (3, 6), (4, 8), (2, 6)]:
        kappas = {k for k in (r // q, r // q - 1) if k >= 1}
        want = set()
        for k in kappas:
            p, s = ms.default_lag_orders(k)
            for gam in product(range(1, k + 1), repeat=q):
                if tuple(sorted(gam)) != gam or max(gam) != k:
                    continue
                want.add((gam, p, s))
        got = {
            (tuple(c.gamma), c.p, c.s)
            for c in ms.enumerate_admissible(q, r, check_minimal=False)
        }
        assert got == want


def test_enumerate_minimality_filter_keeps_reference_set():
    with_check = ms.enumerate_admissible(4, 8, check_minimal=True)
    without = ms.enumerate_admissible(4, 8, check_minimal=False)
    assert [tuple(c.gamma) for c in with_check] == [tuple(c.gamma) for c in without]


def test_info_criteria_reference_rows():
    aic, bic, hqic = ms.info_criteria(-85.20, 1000, 416)
    assert abs(aic - 175.20) < 0.02
    assert abs(bic - 184.89) < 0.02
    assert abs(hqic - 179.03) < 0.02
    aic, bic, hqic = ms.info_criteria(-85.03, 1016, 416)
    assert 174.91 <= aic <= 174.95
    assert abs(bic - 184.79) < 0.02
    assert abs(hqic - 178.84) < 0.02
    assert ms.info_criteria(0.0, 0, 100) == (0.0, 0.0, 0.0)


def test_info_criteria_monotonicity():
    # worse fit never ranks better at fixed complexity; more parameters
    # never rank better at fixed fit
    a1 = ms.info_criteria(-90.0, 500, 300)
    a2 = ms.info_criteria(-91.0, 500, 300)
    assert all(x < y for x, y in zip(a1, a2))
    b1 = ms.info_criteria(-90.0, 500, 300)
    b2 = ms.info_criteria(-90.0, 600, 300)
    assert all(x < y for x, y in zip(b1, b2))


def test_candidate_spec_validation():
    with pytest.raises(ms.ModelSelectionError):
        ms.CandidateSpec(gamma=(2, 1), p=2, s=1)
    with pytest.raises(ms.ModelSelectionError):
        ms.CandidateSpec(gamma=(1, 1), p=2, s=1)
    with pytest.raises(ms.ModelSelectionError):
        ms.CandidateSpec(gamma=(1, 1), p=0, s=1)
    spec = ms.CandidateSpec(gamma=(1, 2), p=2, s=1)
    assert spec.state_dim == 4


def test_select_single_candidate_space():
    truth = make_model((1, 1), n=12, seed=80, scale=0.5)
    spec = sim.DgpSpec(model=truth, sigma_eps=np.eye(2), sigma_xi=0.3, T=400, seed=80)
    X, _, _ = sim.simulate(spec)
    rows = ms.select(
        X, q=2, r=2, em_opts=em.EmOptions(max_iter=60), seed=1
    )
    assert len(rows) == 1
    assert tuple(rows[0].spec.gamma) == (1, 1)
    assert np.isfinite(rows[0].bic)


def test_select_ranks_and_reports_failures():
    truth = make_model((1, 1), n=10, seed=81, scale=0.5)
    spec = sim.DgpSpec(model=truth, sigma_eps=np.eye(2), sigma_xi=0.25, T=500, seed=81)
    X, _, _ = sim.simulate(spec)
    rows = ms.select(X, q=2, r=4, em_opts=em.EmOptions(max_iter=80), seed=2)
    assert len(rows) == len(ms.enumerate_admissible(2, 4))
    crits = [r.bic for r in rows]
    assert crits == sorted(crits)
    csv = ms.rows_to_csv(rows)
    assert csv.splitlines()[0] == "gamma,loglik,AIC,BIC,HQIC,n_params,p,s,converged"
    assert len(csv.splitlines()) == len(rows) + 1


def test_select_nesting_loglik_order():
    # the all-kappa structure nests the others; its fit cannot be worse
    truth = make_model((1, 2), n=10, seed=82, scale=0.5)
    spec = sim.DgpSpec(model=truth, sigma_eps=np.eye(2), sigma_xi=0.25, T=500, seed=82)
    X, _, _ = sim.simulate(spec)
    rows = ms.select(X, q=2, r=4, em_opts=em.EmOptions(max_iter=300), seed=3)
    by_gamma = {tuple(r.spec.gamma): r for r in rows}
    assert by_gamma[(2, 2)].loglik_scaled >= by_gamma[(1, 1)].loglik_scaled - 1e-4
