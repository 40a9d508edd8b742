"""Restriction-aware EM estimation of the echelon-form factor model.

Each iteration runs the Kalman smoother under the current parameters,
updates the two noise covariances from the smoothed moments, and solves
two constrained GLS problems for the free entries of the companion matrix
A and the loading matrix C.  The restrictions enter through the affine
templates vec(L) = H theta + h, and the Kronecker products in the normal
equations are never materialized: the spherical observation noise makes
the C-step decouple row by row, and the A-step normal matrix is assembled
directly over the free coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kalman
from .echelon import (
    KroneckerIndices,
    PolyMatrix,
    RestrictionTemplate,
    RmfdModel,
    StateSpaceModel,
    as_indices,
    build_templates,
)


class EstimationError(RuntimeError):
    """Raised when the M-step or the EM loop cannot proceed."""


@dataclass
class EmOptions:
    max_iter: int = 1000
    tol: float = 1e-5
    variance_floor: float = 1e-8
    moment_variant: str = "corrected"

    def __post_init__(self) -> None:
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class EmTrace:
    """Per-iteration log likelihoods and relative changes."""

    loglik: list[float] = field(default_factory=list)
    delta: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    snapshots: list | None = None


def stabilize_companion(A: np.ndarray, q: int, radius: float = 0.99) -> np.ndarray:
    """Shrink companion eigenvalues radially inside the given radius.

    Scaling the lag-i coefficient block by rho^i maps every eigenvalue
    lambda to rho * lambda, so the zero pattern of the blocks is preserved.
    """
    rho = kalman.spectral_radius(A)
    if rho < radius:
        return A
    out = A.copy()
    m = A.shape[0]
    nb = m // q
    f = radius / rho
    for i in range(1, nb + 1):
        out[:q, (i - 1) * q : i * q] *= f**i
    return out


def _solve_reduced(N: np.ndarray, rhs: np.ndarray, labels) -> np.ndarray:
    try:
        return cho_solve(cho_factor(N), rhs)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(N)
        bad = np.abs(V[:, 0]) > 1e-3
        culprits = [labels[i] for i in np.nonzero(bad)[0][:10]]
        raise EstimationError(
            "singular reduced normal matrix; template appears unidentified or the "
            f"smoothed moments are collinear (offending parameters at positions {culprits})"
        )


def _gls_rowwise(
    M: np.ndarray, rhs_mat: np.ndarray, template: RestrictionTemplate
) -> np.ndarray:
    """Row-decoupled GLS for spherical noise.

    Rows sharing the same free-column set (the bulk of the panel) are
    batched into a single multi-right-hand-side solve.
    """
    theta = np.zeros(template.free_count)
    rows = template.free_rows
    cols = template.free_cols
    groups: dict[tuple, list[int]] = {}
    for k in np.unique(rows):
        J = tuple(cols[rows == k])
        groups.setdefault(J, []).append(int(k))
    for J, ks in groups.items():
        Jarr = np.asarray(J)
        N = M[np.ix_(Jarr, Jarr)]
        sol = _solve_reduced(N, rhs_mat[np.ix_(ks, Jarr)].T, [(ks[0], j) for j in J])
        for i, k in enumerate(ks):
            theta[rows == k] = sol[:, i]
    return theta


def _gls_generic(
    M: np.ndarray, W: np.ndarray, rhs_mat: np.ndarray, template: RestrictionTemplate
) -> np.ndarray:
    """Reduced normal equations of [H'(M (x) W)H] theta = H' vec-side."""
    kk = template.free_rows
    jj = template.free_cols
    N = M[np.ix_(jj, jj)] * W[np.ix_(kk, kk)]
    rhs = rhs_mat[kk, jj]
    return _solve_reduced(N, rhs, list(zip(kk.tolist(), jj.tolist())))


def m_step(
    moments: kalman.SmoothedMoments,
    template_A: RestrictionTemplate,
    template_C: RestrictionTemplate,
    sigma_eps: np.ndarray,
    sigma_xi: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Constrained GLS estimators of the free parameters of A and C.

    theta_C solves the weighted normal equations with weight M_ss (x)
    Sigma_xi^{-1}; with spherical noise the scalar cancels and the system
    decouples across observation rows.  theta_A uses the singular weight
    B Sigma_eps^{-1} B', whose kernel only meets fixed rows of A, so the
    reduced system over the free (top-row) coordinates is regular.
    """
    m = moments.M_ss.shape[0]
    q = sigma_eps.shape[0]

    # C-step: row-wise least squares on the smoothed second moments.
    rhs_C = moments.M_sx.T - template_C.fixed @ moments.M_ss
    theta_C = _gls_rowwise(moments.M_ss, rhs_C, template_C)

    # A-step: weight couples the first q rows through Sigma_eps^{-1}.
    if template_A.free_count:
        try:
            Se_inv = np.linalg.inv(sigma_eps)
        except np.linalg.LinAlgError as exc:
            raise EstimationError("sigma_eps is singular in the M-step") from exc
        W = np.zeros((m, m))
        W[:q, :q] = 0.5 * (Se_inv + Se_inv.T)
        rhs_A = W @ (moments.M_s1s.T - template_A.fixed @ moments.M_s1s1)
        theta_A = _gls_generic(moments.M_s1s1, W, rhs_A, template_A)
    else:
        theta_A = np.zeros(0)
    return theta_A, theta_C


def _model_from_state(
    A: np.ndarray, C: np.ndarray, gamma: KroneckerIndices, p: int, s: int
) -> RmfdModel:
    q = gamma.q
    n = C.shape[0]
    c = np.zeros((p + 1, q, q))
    c[0] = np.eye(q)
    for i in range(1, p + 1):
        c[i] = -A[:q, (i - 1) * q : i * q]
    d = np.zeros((s + 1, n, q))
    for j in range(s + 1):
        d[j] = C[:, j * q : (j + 1) * q]
    return RmfdModel(c=PolyMatrix(c), d=PolyMatrix(d), gamma=gamma)


def em_estimate(
    X,
    gamma,
    s_cap: int | None = None,
    p_cap: int | None = None,
    init: StateSpaceModel | None = None,
    opts: EmOptions | None = None,
) -> tuple[RmfdModel, np.ndarray, float, EmTrace]:
    """Maximum-likelihood estimation of the RMFD-E model by EM.

    X should be a standardized complete T x n panel.  init must respect the
    fixed-entry pattern of the templates implied by gamma and the degree
    caps.  Iterations stop when the relative log-likelihood change drops
    below opts.tol or after opts.max_iter expectation/maximization passes.
    """
    opts = opts or EmOptions()
    gamma = as_indices(gamma)
    if not gamma.is_weakly_increasing:
        raise EstimationError(
            f"estimation requires weakly increasing Kronecker indices, got {tuple(gamma)}"
        )
    X = kalman._as_values(X)
    if np.isnan(X).any():
        raise EstimationError("EM requires a complete panel; impute missing values first")
    T, n = X.shape
    q = gamma.q
    kappa = gamma.kappa
    p = kappa if p_cap is None else int(p_cap)
    s = kappa if s_cap is None else int(s_cap)
    tC, tA, _ = build_templates(gamma, n, q, s_cap=s_cap, p_cap=p_cap)
    m = tA.target_shape[0]
    if init is None:
        raise EstimationError("an initial state-space model is required")
    if init.A.shape != (m, m) or init.C.shape != (n, m):
        raise EstimationError(
            f"init dimensions {init.A.shape}/{init.C.shape} do not match the template "
            f"state dimension {m}"
        )
    A = tA.reconstruct(tA.extract(init.A))
    C = tC.reconstruct(tC.extract(init.C))
    if not (np.allclose(A, init.A, atol=1e-8) and np.allclose(C, init.C, atol=1e-8)):
        raise EstimationError("init violates the fixed-entry pattern of the templates")
    sigma_eps = np.array(init.sigma_eps, dtype=float)
    sigma_xi = max(float(init.sigma_xi), opts.variance_floor)
    B = np.zeros((m, q))
    B[:q] = np.eye(q)

    trace = EmTrace()
    converged = False
    for j in range(1, opts.max_iter + 1):
        ss = StateSpaceModel(A=A, B=B, C=C, sigma_eps=sigma_eps, sigma_xi=sigma_xi)
        fo = kalman.filter(ss, X)
        if not np.isfinite(fo.loglik):
            raise EstimationError(f"non-finite log likelihood at iteration {j}")
        trace.loglik.append(fo.loglik)
        if j >= 2:
            l1, l0 = trace.loglik[-1], trace.loglik[-2]
            delta = abs(l1 - l0) / (0.5 * abs(l1 + l0))
            trace.delta.append(delta)
            if delta < opts.tol:
                converged = True
                trace.iterations = j
                break
        so = kalman.smooth(ss, fo, X)
        mom = kalman.smoothed_moments(ss, so, fo, X, variant=opts.moment_variant)

        sigma_xi = max(mom.sigma_xi_new, opts.variance_floor)
        # exact conditional maximizer over t = 2..T transitions
        sigma_eps = mom.sigma_eps_new * (T / (T - 1.0))
        w = np.linalg.eigvalsh(sigma_eps)
        if w[0] < opts.variance_floor:
            sigma_eps = sigma_eps + (opts.variance_floor - w[0]) * np.eye(q)

        theta_A, theta_C = m_step(mom, tA, tC, sigma_eps, sigma_xi)
        A = stabilize_companion(tA.reconstruct(theta_A), q)
        C = tC.reconstruct(theta_C)
        trace.iterations = j

    if not converged:
        ss = StateSpaceModel(A=A, B=B, C=C, sigma_eps=sigma_eps, sigma_xi=sigma_xi)
        trace.loglik.append(kalman.filter(ss, X).loglik)
    trace.converged = converged
    model = _model_from_state(A, C, gamma, p, s)
    return model, sigma_eps, sigma_xi, trace


def result_to_json(
    model: RmfdModel, sigma_eps: np.ndarray, sigma_xi: float, trace: EmTrace
) -> str:
    """Serialize an estimation result (echelon schema plus fit metadata)."""
    payload = json.loads(model.to_json())
    payload.update(
        {
            "sigma_eps": np.asarray(sigma_eps).tolist(),
            "sigma_xi": float(sigma_xi),
            "loglik": trace.loglik[-1] if trace.loglik else None,
            "iterations": trace.iterations,
            "converged": trace.converged,
        }
    )
    return json.dumps(payload)
