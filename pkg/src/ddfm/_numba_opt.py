"""Compiled filter/smoother loops; numpy fallback lives in kalman.py.

The recursions are identical to the pure-numpy implementations: one LU-type
solve against T = I + C'C P / sigma^2 per period.  Keeping the loop in
compiled code matters because the state dimension is tiny and the per-call
overhead of numpy otherwise dominates the EM runtime.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def filter_core(A, BQB, CtC, CtX, xx, P0, sig2):  # pragma: no cover - exercised via kalman
    T = CtX.shape[0]
    m = A.shape[0]
    eye_m = np.eye(m)
    s_pred = np.zeros((T, m))
    P_pred = np.zeros((T, m, m))
    P_filt = np.zeros((T, m, m))
    Lmat = np.zeros((T, m, m))
    CtSinv_nu = np.zeros((T, m))
    CtSinvC = np.zeros((T, m, m))

    s = np.zeros(m)
    P = P0.copy()
    loglik = 0.0
    ok = True
    rhs = np.empty((m, m + 1))
    for t in range(T):
        s_pred[t] = s
        P_pred[t] = P
        Tmat = eye_m + (CtC @ P) / sig2
        sgn, logdetT = np.linalg.slogdet(Tmat)
        if sgn <= 0 or not np.isfinite(logdetT):
            ok = False
            break
        Ct_nu = CtX[t] - CtC @ s
        nu_nu = xx[t] - 2.0 * (CtX[t] @ s) + s @ (CtC @ s)
        rhs[:, 0] = Ct_nu
        rhs[:, 1:] = CtC
        sol = np.linalg.solve(Tmat, rhs)
        CtSinv_nu[t] = sol[:, 0] / sig2
        half = sol[:, 1:] / sig2
        CtSinvC[t] = 0.5 * (half + half.T)
        Pf_raw = np.linalg.solve(Tmat.T.copy(), P)
        P_f = 0.5 * (Pf_raw + Pf_raw.T)
        quad = (nu_nu - Ct_nu @ (P_f @ Ct_nu) / sig2) / sig2
        loglik += -0.5 * (logdetT + quad)

        P_filt[t] = P_f
        Lmat[t] = A - (A @ P_f @ CtC) / sig2
        s = A @ (s + P_f @ Ct_nu / sig2)
        Pn = A @ P_f @ A.T + BQB
        P = 0.5 * (Pn + Pn.T)
    return s_pred, P_pred, P_filt, Lmat, CtSinv_nu, CtSinvC, loglik, ok


@njit(cache=True)
def smoother_core(A, SeBt, s_pred, P_pred, Lmat, CtSinv_nu, CtSinvC):  # pragma: no cover
    T = s_pred.shape[0]
    m = A.shape[0]
    qdim = SeBt.shape[0]
    eye_m = np.eye(m)
    s_smooth = np.zeros((T, m))
    P_smooth = np.zeros((T, m, m))
    C_lag = np.zeros((T, m, m))
    eps_smooth = np.zeros((T, qdim))
    N_all = np.zeros((T, m, m))

    r = np.zeros(m)
    N = np.zeros((m, m))
    for t in range(T - 1, -1, -1):
        Lt = Lmat[t]
        r = CtSinv_nu[t] + Lt.T @ r
        N = CtSinvC[t] + Lt.T @ N @ Lt
        Pt = P_pred[t]
        PN = Pt @ N
        s_smooth[t] = s_pred[t] + Pt @ r
        Ps = Pt - PN @ Pt
        P_smooth[t] = 0.5 * (Ps + Ps.T)
        N_all[t] = N
        eps_smooth[t] = SeBt @ r
    for t in range(1, T):
        C_lag[t] = P_pred[t - 1] @ Lmat[t - 1].T @ (eye_m - N_all[t] @ P_pred[t])
    return s_smooth, P_smooth, C_lag, eps_smooth
