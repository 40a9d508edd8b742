"""Comparison estimators: two-step principal-components S-DFM and a SVAR.

The static-factor benchmark extracts r principal components, fits an
unrestricted VAR(m) on them, and compresses the r-dimensional VAR
innovation to q shocks through the leading eigenpairs of its covariance.
The small recursive SVAR is an ordinary least-squares VAR with intercept
and lower-triangular Cholesky identification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kalman
from .echelon import PolyMatrix
from .structural import cholesky_identify


class BenchmarkError(ValueError):
    pass


@dataclass(frozen=True)
class SdfmFit:
    loadings: np.ndarray
    var_coeffs: tuple[np.ndarray, ...]
    resid_cov: np.ndarray
    reduction: np.ndarray


def _var_ls(Z: np.ndarray, lags: int, intercept: bool) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares VAR(lags); returns ((lags, r, r) coefficients, residuals)."""
    T, r = Z.shape
    if T <= r * lags + int(intercept):
        raise BenchmarkError(f"T={T} too short for a VAR({lags}) in {r} variables")
    rows = T - lags
    cols = [Z[lags - i - 1 : T - i - 1] for i in range(lags)]
    R = np.concatenate(cols, axis=1)
    if intercept:
        R = np.concatenate([np.ones((rows, 1)), R], axis=1)
    Y = Z[lags:]
    beta, *_ = np.linalg.lstsq(R, Y, rcond=None)
    resid = Y - R @ beta
    off = 1 if intercept else 0
    coeffs = np.stack(
        [beta[off + i * r : off + (i + 1) * r].T for i in range(lags)], axis=0
    )
    return coeffs, resid


def _ma_coeffs(coeffs: np.ndarray, horizon: int) -> np.ndarray:
    """Moving-average representation Psi_j of a VAR, Psi_0 = I."""
    lags, r, _ = coeffs.shape
    psi = np.zeros((horizon + 1, r, r))
    psi[0] = np.eye(r)
    for j in range(1, horizon + 1):
        for i in range(1, min(j, lags) + 1):
            psi[j] += psi[j - i] @ coeffs[i - 1]
    return psi


def estimate_sdfm(
    X, r: int, m: int, q: int, horizon: int = 48
) -> tuple[SdfmFit, PolyMatrix]:
    """Two-step S-DFM: principal components, factor VAR, shock reduction.

    Loadings are the top-r eigenvectors of the sample covariance; the IRF
    maps the q retained (scaled) eigen-shocks of the VAR residual through
    the factor VAR and the loadings.
    """
    X = kalman._as_values(X)
    T, n = X.shape
    if r > n:
        raise BenchmarkError(f"r={r} exceeds the number of series n={n}")
    if m < 1:
        raise BenchmarkError("VAR order m must be at least 1")
    cov = X.T @ X / T
    w, V = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    if w[order[r - 1]] <= 0:
        raise BenchmarkError(f"sample covariance has rank below r={r}")
    D = V[:, order[:r]]
    Z = X @ D
    coeffs, resid = _var_ls(Z, m, intercept=False)
    sigma_u = resid.T @ resid / resid.shape[0]
    wu, Vu = np.linalg.eigh(sigma_u)
    ou = np.argsort(wu)[::-1]
    if q > r or wu[ou[q - 1]] <= 0:
        raise BenchmarkError(f"fewer than q={q} positive shock directions")
    reduction = Vu[:, ou[:q]] * np.sqrt(wu[ou[:q]])
    psi = _ma_coeffs(coeffs, horizon)
    ks = np.einsum("nr,jrs,sq->jnq", D, psi, reduction)
    fit = SdfmFit(
        loadings=D, var_coeffs=tuple(coeffs), resid_cov=sigma_u, reduction=reduction
    )
    return fit, PolyMatrix(ks)


def estimate_svar(
    X_small, lags: int = 9, intercept: bool = True, horizon: int = 48
) -> tuple[PolyMatrix, np.ndarray]:
    """Recursive SVAR: least-squares VAR plus lower-triangular impact matrix."""
    X = kalman._as_values(X_small)
    coeffs, resid = _var_ls(X, lags, intercept)
    sigma_u = resid.T @ resid / resid.shape[0]
    H = cholesky_identify(sigma_u)
    psi = _ma_coeffs(coeffs, horizon)
    return PolyMatrix(psi @ H), H
