"""Exact Gaussian filtering and smoothing for the factor state space.

The observation noise is spherical (sigma_xi^2 I_n), which lets every
n-dimensional inversion collapse to the state dimension via the Woodbury
identity.  On complete panels the observation matrix enters the
recursions only through C'C and C'x_t, so all n-dimensional work is
hoisted into a handful of large matrix products and the per-period loop
runs entirely in the (small) state dimension; with n in the hundreds and
a state dimension below ten this is the difference between a usable and
an unusable EM loop.  The smoother is the standard backward recursion in
(r, N) form; missing observations fall back to a row-deletion update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import _numba_opt
from .echelon import StateSpaceModel

# compiled fast path for complete panels; flip off to force pure numpy
USE_NUMBA = _numba_opt.HAVE_NUMBA


class FilterError(RuntimeError):
    """Raised when the filter cannot be run (unstable system, singular S_t)."""


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def solve_lyapunov(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Stationary covariance P = A P A' + Q via the vectorized linear solve."""
    m = A.shape[0]
    lhs = np.eye(m * m) - np.kron(A, A)
    try:
        vec = np.linalg.solve(lhs, Q.flatten(order="F"))
    except np.linalg.LinAlgError as exc:
        raise FilterError("Lyapunov equation has no solution (unit root in A)") from exc
    return _sym(vec.reshape((m, m), order="F"))


@dataclass
class FilterOutput:
    """Predictive-form filter pass: one entry per time point.

    s_pred[t], P_pred[t] are the one-step-ahead state moments and P_filt[t]
    the filtered covariance; nu[t] is the innovation (zero at missing rows).
    CtSinv_nu and CtSinvC cache C' S_t^{-1} nu_t and C' S_t^{-1} C for the
    smoother; L[t] = A - K_t C.  The n-dimensional gain K_t is materialized
    on demand from the filtered covariance.  loglik is the Gaussian
    prediction-error log likelihood.
    """

    s_pred: np.ndarray
    P_pred: np.ndarray
    P_filt: np.ndarray
    L: np.ndarray
    CtSinv_nu: np.ndarray
    CtSinvC: np.ndarray
    mask: np.ndarray
    loglik: float
    model: StateSpaceModel
    _X: np.ndarray | None = field(default=None, repr=False)
    _nu: np.ndarray | None = field(default=None, repr=False)

    @property
    def nu(self) -> np.ndarray:
        if self._nu is None:
            self._nu = np.where(self.mask, self._X - self.s_pred @ self.model.C.T, 0.0)
        return self._nu

    @property
    def K(self) -> np.ndarray:
        """Kalman gains K_t = A P_filt[t] C' / sigma_xi^2, zero at missing rows."""
        A, C = self.model.A, self.model.C
        K = np.einsum("ij,tjk,lk->til", A, self.P_filt, C) / self.model.sigma_xi
        K *= self.mask[:, None, :]
        return K

    def innovation_cov(self, t: int) -> np.ndarray:
        """S_t = C P_pred[t] C' + sigma_xi^2 I over the rows observed at t."""
        C = self.model.C[self.mask[t]]
        return C @ self.P_pred[t] @ C.T + self.model.sigma_xi * np.eye(C.shape[0])


@dataclass
class SmootherOutput:
    """Backward pass: smoothed states, covariances and disturbances.

    C_lag[t] holds Cov(s_{t-1}, s_t | X) and is defined for t >= 1;
    eps_smooth[t] is E[eps_t | X] and e_smooth[t] is E[xi_t | X]
    (zero at missing rows).
    """

    s_smooth: np.ndarray
    P_smooth: np.ndarray
    C_lag: np.ndarray
    eps_smooth: np.ndarray
    e_smooth: np.ndarray


@dataclass
class SmoothedMoments:
    """Conditional moment matrices consumed by the M-step GLS regressions.

    All quantities are normalized by 1/T (1/(nT) for sigma_xi_new) with the
    sums running over t = 1..T for M_ss, M_sx and sigma_xi_new and over
    t = 2..T for the lagged blocks and sigma_eps_new.
    """

    M_ss: np.ndarray
    M_sx: np.ndarray
    M_s1s1: np.ndarray
    M_s1s: np.ndarray
    sigma_xi_new: float
    sigma_eps_new: np.ndarray
    T: int


def _as_values(X) -> np.ndarray:
    if hasattr(X, "values"):
        X = X.values
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a T x n array")
    return X


def filter(ss: StateSpaceModel, X) -> FilterOutput:  # noqa: A001 - spec name
    """Kalman filter with Lyapunov initialization and Woodbury updates."""
    X = _as_values(X)
    T, n = X.shape
    if n != ss.n_obs:
        raise ValueError(f"X has {n} columns, model expects {ss.n_obs}")
    A, B, C = ss.A, ss.B, ss.C
    m = ss.state_dim
    sig2 = ss.sigma_xi
    if sig2 <= 0:
        raise FilterError("sigma_xi^2 must be positive")
    if spectral_radius(A) >= 1.0 - 1e-10:
        raise FilterError("A is not stable; Lyapunov initialization undefined")
    BQB = B @ ss.sigma_eps @ B.T

    mask = ~np.isnan(X)
    P0 = solve_lyapunov(A, BQB)
    if mask.all():
        out = _filter_complete(ss, X, P0, BQB)
    else:
        out = _filter_masked(ss, X, mask, P0, BQB)
    out._X = X
    return out


def _step_core(s, P, CtC, Ct_nu, nu_nu, sig2, eye_m):
    """One measurement update through the LU of T = I + C'C P / sigma^2.

    Solving against T (and its transpose) yields C'S^{-1}nu, C'S^{-1}C and
    the filtered covariance without the differencing that loses precision
    as sigma^2 vanishes; log det S falls out of the same factorization.
    """
    Tmat = eye_m + (CtC @ P) / sig2
    lu, piv = lu_factor(Tmat, check_finite=False)
    rhs = np.concatenate([Ct_nu[:, None], CtC], axis=1)
    sol = lu_solve((lu, piv), rhs, check_finite=False)
    CtSinv_nu_t = sol[:, 0] / sig2
    CtSinvC_t = _sym(sol[:, 1:]) / sig2
    P_f = _sym(lu_solve((lu, piv), P, trans=1, check_finite=False))
    logdetT = float(np.sum(np.log(np.abs(np.diag(lu)))))
    quad = (nu_nu - Ct_nu @ (P_f @ Ct_nu) / sig2) / sig2
    return CtSinv_nu_t, CtSinvC_t, P_f, logdetT, quad


def _filter_complete(ss, X, P0, BQB) -> FilterOutput:
    T, n = X.shape
    A, C = ss.A, ss.C
    m = ss.state_dim
    sig2 = ss.sigma_xi
    CtC = C.T @ C
    CtX = X @ C  # row t holds C' x_t
    xx = np.einsum("ti,ti->t", X, X)

    if USE_NUMBA:
        out = _numba_opt.filter_core(
            np.ascontiguousarray(A), BQB, CtC, CtX, xx, P0, sig2
        )
        s_pred, P_pred, P_filt, Lmat, CtSinv_nu, CtSinvC, core_ll, ok = out
        if not ok:
            raise FilterError("S_t numerically singular")
        loglik = core_ll - 0.5 * T * n * (np.log(2.0 * np.pi) + np.log(sig2))
        return FilterOutput(
            s_pred=s_pred,
            P_pred=P_pred,
            P_filt=P_filt,
            L=Lmat,
            CtSinv_nu=CtSinv_nu,
            CtSinvC=CtSinvC,
            mask=np.ones((T, n), dtype=bool),
            loglik=float(loglik),
            model=ss,
        )

    s_pred = np.zeros((T, m))
    P_pred = np.zeros((T, m, m))
    P_filt = np.zeros((T, m, m))
    Lmat = np.zeros((T, m, m))
    CtSinv_nu = np.zeros((T, m))
    CtSinvC = np.zeros((T, m, m))

    s = np.zeros(m)
    P = P0
    eye_m = np.eye(m)
    loglik = -0.5 * T * n * (np.log(2.0 * np.pi) + np.log(sig2))
    for t in range(T):
        s_pred[t] = s
        P_pred[t] = P
        Ct_nu = CtX[t] - CtC @ s  # C' nu_t
        nu_nu = xx[t] - 2.0 * CtX[t] @ s + s @ (CtC @ s)
        try:
            CtSinv_nu[t], CtSinvC[t], P_f, logdetT, quad = _step_core(
                s, P, CtC, Ct_nu, nu_nu, sig2, eye_m
            )
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise FilterError(f"S_t numerically singular at t={t}") from exc
        if not np.isfinite(logdetT):
            raise FilterError(f"S_t numerically singular at t={t}")
        loglik += -0.5 * (logdetT + quad)

        P_filt[t] = P_f
        Lmat[t] = A - (A @ P_f @ CtC) / sig2
        s = A @ (s + P_f @ Ct_nu / sig2)
        P = _sym(A @ P_f @ A.T + BQB)

    return FilterOutput(
        s_pred=s_pred,
        P_pred=P_pred,
        P_filt=P_filt,
        L=Lmat,
        CtSinv_nu=CtSinv_nu,
        CtSinvC=CtSinvC,
        mask=np.ones((T, n), dtype=bool),
        loglik=float(loglik),
        model=ss,
    )


def _filter_masked(ss, X, mask, P0, BQB) -> FilterOutput:
    T, n = X.shape
    A, C = ss.A, ss.C
    m = ss.state_dim
    sig2 = ss.sigma_xi
    eye_m = np.eye(m)

    s_pred = np.zeros((T, m))
    P_pred = np.zeros((T, m, m))
    P_filt = np.zeros((T, m, m))
    Lmat = np.zeros((T, m, m))
    CtSinv_nu = np.zeros((T, m))
    CtSinvC = np.zeros((T, m, m))

    s = np.zeros(m)
    P = P0
    loglik = 0.0
    ln2pi = np.log(2.0 * np.pi)
    for t in range(T):
        s_pred[t] = s
        P_pred[t] = P
        idx = mask[t]
        nt = int(idx.sum())
        if nt == 0:
            P_filt[t] = P
            Lmat[t] = A
            s = A @ s
            P = _sym(A @ P @ A.T + BQB)
            continue
        Ct = C[idx]
        CtC = Ct.T @ Ct
        nu_t = X[t, idx] - Ct @ s
        Ct_nu = Ct.T @ nu_t
        try:
            CtSinv_nu[t], CtSinvC[t], P_f, logdetT, quad = _step_core(
                s, P, CtC, Ct_nu, nu_t @ nu_t, sig2, eye_m
            )
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise FilterError(f"S_t numerically singular at t={t}") from exc
        if not np.isfinite(logdetT):
            raise FilterError(f"S_t numerically singular at t={t}")
        loglik += -0.5 * (nt * (ln2pi + np.log(sig2)) + logdetT + quad)

        P_filt[t] = P_f
        Lmat[t] = A - (A @ P_f @ CtC) / sig2
        s = A @ (s + P_f @ Ct_nu / sig2)
        P = _sym(A @ P_f @ A.T + BQB)

    return FilterOutput(
        s_pred=s_pred,
        P_pred=P_pred,
        P_filt=P_filt,
        L=Lmat,
        CtSinv_nu=CtSinv_nu,
        CtSinvC=CtSinvC,
        mask=mask,
        loglik=float(loglik),
        model=ss,
    )


def smooth(ss: StateSpaceModel, filter_out: FilterOutput, X) -> SmootherOutput:
    """Backward smoother in (r, N) form with lag-one covariances.

    The lag-one covariance follows the smoothed-error cross-covariance
    Cov(s_{t-1}, s_t | X) = P_pred[t-1] L_{t-1}' (I - N_{t-1} P_pred[t]).
    """
    X = _as_values(X)
    T, n = X.shape
    m = ss.state_dim
    A, B, C = ss.A, ss.B, ss.C
    s_pred, P_pred = filter_out.s_pred, filter_out.P_pred
    Lmat = filter_out.L
    eye_m = np.eye(m)
    SeBt = ss.sigma_eps @ B.T

    if USE_NUMBA:
        s_smooth, P_smooth, C_lag, eps_smooth = _numba_opt.smoother_core(
            np.ascontiguousarray(A),
            np.ascontiguousarray(SeBt),
            s_pred,
            P_pred,
            Lmat,
            filter_out.CtSinv_nu,
            filter_out.CtSinvC,
        )
        e_smooth = np.where(filter_out.mask, X - s_smooth @ C.T, 0.0)
        return SmootherOutput(
            s_smooth=s_smooth,
            P_smooth=P_smooth,
            C_lag=C_lag,
            eps_smooth=eps_smooth,
            e_smooth=e_smooth,
        )

    s_smooth = np.zeros((T, m))
    P_smooth = np.zeros((T, m, m))
    C_lag = np.zeros((T, m, m))
    eps_smooth = np.zeros((T, B.shape[1]))
    N_all = np.zeros((T, m, m))

    r = np.zeros(m)
    N = np.zeros((m, m))
    for t in range(T - 1, -1, -1):
        Lt = Lmat[t]
        r = filter_out.CtSinv_nu[t] + Lt.T @ r
        N = filter_out.CtSinvC[t] + Lt.T @ N @ Lt
        Pt = P_pred[t]
        PN = Pt @ N
        s_smooth[t] = s_pred[t] + Pt @ r
        P_smooth[t] = _sym(Pt - PN @ Pt)
        N_all[t] = N
        eps_smooth[t] = SeBt @ r

    for t in range(1, T):
        C_lag[t] = P_pred[t - 1] @ Lmat[t - 1].T @ (eye_m - N_all[t] @ P_pred[t])

    e_smooth = np.where(filter_out.mask, X - s_smooth @ C.T, 0.0)

    return SmootherOutput(
        s_smooth=s_smooth,
        P_smooth=P_smooth,
        C_lag=C_lag,
        eps_smooth=eps_smooth,
        e_smooth=e_smooth,
    )


def smoothed_moments(
    ss: StateSpaceModel,
    smoother_out: SmootherOutput,
    filter_out: FilterOutput,
    X,
    variant: str = "corrected",
) -> SmoothedMoments:
    """The six conditional moments feeding the M-step.

    variant selects the shock-covariance estimator: "corrected" uses the
    smoothed state-equation residual moments E[(s_t - A s_{t-1})(.)' | X]
    (which preserves the EM ascent property); "literal" follows the summed
    display with the smoothed disturbance taken at its stated (one step
    later) index.
    """
    X = _as_values(X)
    if np.isnan(X).any():
        raise ValueError("smoothed moments require a complete panel; impute first")
    T, n = X.shape
    A, B, C = ss.A, ss.B, ss.C
    s = smoother_out.s_smooth
    P = smoother_out.P_smooth
    Cl = smoother_out.C_lag

    P_total = P.sum(axis=0)
    M_ss = (s.T @ s + P_total) / T
    M_sx = (s.T @ X) / T
    M_s1s1 = (s[:-1].T @ s[:-1] + P_total - P[-1]) / T
    M_s1s = (s[:-1].T @ s[1:] + Cl[1:].sum(axis=0)) / T

    e = smoother_out.e_smooth
    sigma_xi_new = (np.sum(e * e) + np.trace(C @ P_total @ C.T)) / (n * T)

    P_sum = P_total - P[0]
    P1_sum = P_total - P[-1]
    Cl_sum = Cl[1:].sum(axis=0)
    V = P_sum + A @ P1_sum @ A.T - A @ Cl_sum - Cl_sum.T @ A.T
    BtVB = B.T @ V @ B
    if variant == "corrected":
        eps = smoother_out.eps_smooth[1:]
        sigma_eps_new = (eps.T @ eps + BtVB) / T
    elif variant == "literal":
        eps = np.vstack([smoother_out.eps_smooth[2:], np.zeros((1, B.shape[1]))])
        sigma_eps_new = (eps.T @ eps + BtVB) / T
    else:
        raise ValueError(f"unknown moment variant '{variant}'")

    return SmoothedMoments(
        M_ss=_sym(M_ss),
        M_sx=M_sx,
        M_s1s1=_sym(M_s1s1),
        M_s1s=M_s1s,
        sigma_xi_new=float(sigma_xi_new),
        sigma_eps_new=_sym(sigma_eps_new),
        T=T,
    )
