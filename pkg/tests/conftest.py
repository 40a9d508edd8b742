"""Shared fixtures and independent oracles for the test suite.

The oracles here deliberately avoid the library's fast paths: the joint
Gaussian oracle conditions on the stacked observation vector by dense
block inversion, and the GLS oracle materializes the full Kronecker
normal equations from the dense template matrices.
"""

from __future__ import annotations

import numpy as np
import pytest

from ddfm import kalman
from ddfm.echelon import RestrictionTemplate, StateSpaceModel
from ddfm.sim import random_canonical_model


@pytest.fixture
def rng():
    return np.random.default_rng(20240214)


def make_model(gamma, n, seed, scale=0.5, radius=0.6, s_cap=None, p_cap=None):
    return random_canonical_model(
        gamma, n, seed=seed, scale=scale, radius=radius, s_cap=s_cap, p_cap=p_cap
    )


def random_statespace(m, n, q, seed, radius=0.6, sigma_xi=0.7):
    """Unstructured stable state-space system for filter oracles."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, m))
    A *= radius / max(abs(np.linalg.eigvals(A)))
    B = np.zeros((m, q))
    B[:q] = np.eye(q)
    C = rng.normal(size=(n, m))
    root = rng.normal(size=(q, q))
    sigma_eps = root @ root.T / q + 0.5 * np.eye(q)
    return StateSpaceModel(A=A, B=B, C=C, sigma_eps=sigma_eps, sigma_xi=sigma_xi)


def joint_gaussian_oracle(ss: StateSpaceModel, X: np.ndarray):
    """Conditional state moments and log likelihood by dense conditioning.

    Returns (means (T,m), cov blocks dict[(i,j)] for |i-j|<=1, loglik).
    Missing entries of X (NaN) are dropped from the conditioning set.
    """
    X = np.asarray(X, dtype=float)
    T, n = X.shape
    m = ss.state_dim
    A, B, C = ss.A, ss.B, ss.C
    BQB = B @ ss.sigma_eps @ B.T
    Pinf = kalman.solve_lyapunov(A, BQB)
    pows = [np.eye(m)]
    for _ in range(T):
        pows.append(A @ pows[-1])
    Sig_S = np.zeros((T * m, T * m))
    for i in range(T):
        for j in range(T):
            blk = pows[i - j] @ Pinf if i >= j else Pinf @ pows[j - i].T
            Sig_S[i * m : (i + 1) * m, j * m : (j + 1) * m] = blk
    Cb = np.kron(np.eye(T), C)
    Sig_X = Cb @ Sig_S @ Cb.T + ss.sigma_xi * np.eye(T * n)
    Sig_SX = Sig_S @ Cb.T

    obs = ~np.isnan(X).flatten()
    x = X.flatten()[obs]
    Sig_X = Sig_X[np.ix_(obs, obs)]
    Sig_SX = Sig_SX[:, obs]
    sol = np.linalg.solve(Sig_X, x)
    means = (Sig_SX @ sol).reshape(T, m)
    Var = Sig_S - Sig_SX @ np.linalg.solve(Sig_X, Sig_SX.T)
    sgn, logdet = np.linalg.slogdet(Sig_X)
    loglik = -0.5 * (obs.sum() * np.log(2 * np.pi) + logdet + x @ sol)
    cov = {}
    for t in range(T):
        cov[(t, t)] = Var[t * m : (t + 1) * m, t * m : (t + 1) * m]
        if t >= 1:
            cov[(t - 1, t)] = Var[(t - 1) * m : t * m, t * m : (t + 1) * m]
    return means, cov, float(loglik)


def dense_gls_oracle(
    M: np.ndarray, W: np.ndarray, target: np.ndarray, template: RestrictionTemplate
) -> np.ndarray:
    """Constrained GLS through the full Kronecker normal equations.

    Solves [H'(M (x) W)H] theta = H'(target (x) W) vec(I) - H'(M (x) W)h
    with the dense H and h of the template; target is the cross-moment
    E[s y'] arranged (state dim x response dim).
    """
    H = template.H
    h = template.h
    r = W.shape[0]
    Omega = np.kron(M, W)
    Pi = np.kron(target, W)
    lhs = H.T @ Omega @ H
    rhs = H.T @ Pi @ np.eye(r).flatten(order="F") - H.T @ Omega @ h
    return np.linalg.solve(lhs, rhs)
