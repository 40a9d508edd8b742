"""Reversed-echelon right matrix fraction descriptions (RMFD-E).

A tall rational impulse-response function k(z) = d(z) c(z)^{-1}, with d(z)
an n x q lag polynomial of loadings and c(z) a q x q VAR lag polynomial,
is identified only up to post-multiplication by a unimodular matrix.  The
reversed-echelon canonical form pins the pair (c, d) down through zero and
unity restrictions driven by a vector of Kronecker indices (one maximum
column degree per shock).  This module implements:

- the restriction templates vec(L) = H theta + h for the state-space
  matrices implied by a Kronecker index vector,
- assembly of the companion state-space form and IRF computation from
  both representations,
- minimality checks and unimodular transformations, and
- realization of the canonical (c, d) pair from a truncated IRF via the
  block-Hankel column-basis construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EchelonError(ValueError):
    """Raised for invalid Kronecker structures or failed realizations."""


# ---------------------------------------------------------------------------
# Core value types
# ---------------------------------------------------------------------------


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class KroneckerIndices:
    """Ordered vector of per-column maximum lag degrees (gamma_1 ... gamma_q)."""

    gamma: tuple[int, ...]

    def __post_init__(self) -> None:
        g = tuple(int(v) for v in self.gamma)
        if len(g) < 1:
            raise EchelonError("Kronecker index vector must be non-empty")
        if any(v < 0 for v in g):
            raise EchelonError(f"Kronecker indices must be non-negative, got {g}")
        object.__setattr__(self, "gamma", g)

    @property
    def q(self) -> int:
        return len(self.gamma)

    @property
    def kappa(self) -> int:
        """Maximum Kronecker index; sets the companion state dimension."""
        return max(self.gamma)

    @property
    def is_weakly_increasing(self) -> bool:
        return all(a <= b for a, b in zip(self.gamma, self.gamma[1:]))

    def __iter__(self):
        return iter(self.gamma)

    def __len__(self) -> int:
        return len(self.gamma)


def as_indices(gamma) -> KroneckerIndices:
    if isinstance(gamma, KroneckerIndices):
        return gamma
    return KroneckerIndices(tuple(gamma))


class PolyMatrix:
    """Finite matrix polynomial in the lag operator.

    Coefficients are stored as a (degree+1, rows, cols) array; index j is
    the coefficient of z^j.  Instances are immutable.
    """

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs) -> None:
        if isinstance(coeffs, PolyMatrix):
            arr = coeffs._coeffs
        else:
            arr = np.array(coeffs, dtype=float)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.ndim != 3:
            raise EchelonError(
                f"PolyMatrix expects a stack of 2-d coefficient matrices, got ndim={arr.ndim}"
            )
        self._coeffs = _frozen(arr)

    @property
    def coeffs(self) -> np.ndarray:
        """Read-only (degree+1, rows, cols) coefficient stack."""
        return self._coeffs

    @property
    def degree(self) -> int:
        return self._coeffs.shape[0] - 1

    @property
    def rows(self) -> int:
        return self._coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self._coeffs.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def coeff(self, j: int) -> np.ndarray:
        """Coefficient of z^j, zero outside the stored range."""
        if 0 <= j <= self.degree:
            return self._coeffs[j]
        return np.zeros((self.rows, self.cols))

    def padded(self, degree: int) -> np.ndarray:
        """Coefficient stack zero-padded (or cut) to the given degree."""
        out = np.zeros((degree + 1, self.rows, self.cols))
        upto = min(degree, self.degree)
        out[: upto + 1] = self._coeffs[: upto + 1]
        return out

    def trimmed(self, atol: float = 0.0) -> "PolyMatrix":
        """Drop trailing coefficient matrices that are (numerically) zero."""
        deg = self.degree
        while deg > 0 and np.max(np.abs(self._coeffs[deg])) <= atol:
            deg -= 1
        return PolyMatrix(self._coeffs[: deg + 1])

    def __mul__(self, other: "PolyMatrix") -> "PolyMatrix":
        other = other if isinstance(other, PolyMatrix) else PolyMatrix(other)
        if self.cols != other.rows:
            raise EchelonError(
                f"polynomial product mismatch: {self.shape} x {other.shape}"
            )
        deg = self.degree + other.degree
        out = np.zeros((deg + 1, self.rows, other.cols))
        for i in range(self.degree + 1):
            for j in range(other.degree + 1):
                out[i + j] += self._coeffs[i] @ other._coeffs[j]
        return PolyMatrix(out)

    def allclose(self, other: "PolyMatrix", atol: float = 1e-10) -> bool:
        deg = max(self.degree, other.degree)
        return bool(np.allclose(self.padded(deg), other.padded(deg), atol=atol, rtol=0.0))

    def __repr__(self) -> str:
        return f"PolyMatrix(degree={self.degree}, shape={self.rows}x{self.cols})"


@dataclass(frozen=True)
class RmfdModel:
    """Right matrix fraction description k(z) = d(z) c(z)^{-1}.

    c is the q x q VAR polynomial stored with raw coefficients, i.e.
    c(z) = c0 + C1 z + ... + Cp z^p; the VAR recursion consumes -Ci.
    d is the n x q loading polynomial.  gamma records the Kronecker
    structure the model was built from (meaningful when canonical).
    """

    c: PolyMatrix
    d: PolyMatrix
    gamma: KroneckerIndices

    def __post_init__(self) -> None:
        object.__setattr__(self, "gamma", as_indices(self.gamma))
        if self.c.rows != self.c.cols:
            raise EchelonError("c(z) must be square")
        if self.c.cols != self.gamma.q or self.d.cols != self.gamma.q:
            raise EchelonError("c(z) and d(z) must have q columns")
        if self.d.rows < self.d.cols:
            raise EchelonError("only tall systems (n >= q) are supported")

    @property
    def n(self) -> int:
        return self.d.rows

    @property
    def q(self) -> int:
        return self.c.cols

    @property
    def p(self) -> int:
        return self.c.degree

    @property
    def s(self) -> int:
        return self.d.degree

    def is_canonical(self, atol: float = 1e-8) -> bool:
        """Check the reversed-echelon zero/one pattern of this model."""
        tC, tA, links = build_templates(self.gamma, self.n, self.q)
        kappa = self.gamma.kappa
        nb = kappa + 1
        cmat = np.zeros((self.n, nb * self.q))
        for j in range(nb):
            cmat[:, j * self.q : (j + 1) * self.q] = self.d.coeff(j)
        amat = np.zeros((nb * self.q, nb * self.q))
        amat[self.q :, : (nb - 1) * self.q] = np.eye((nb - 1) * self.q)
        for i in range(1, nb + 1):
            if i <= self.p:
                amat[: self.q, (i - 1) * self.q : i * self.q] = -self.c.coeff(i)
        ok_c = np.allclose(tC.reconstruct(tC.extract(cmat)), cmat, atol=atol)
        ok_a = np.allclose(tA.reconstruct(tA.extract(amat)), amat, atol=atol)
        c0 = self.c.coeff(0)
        d0 = self.d.coeff(0)
        ok_ties = np.allclose(c0, d0[: self.q], atol=atol)
        return bool(ok_c and ok_a and ok_ties)

    def to_json(self) -> str:
        """Serialize per the canonical JSON schema (row-major, lag-ascending)."""
        payload = {
            "gamma": list(self.gamma),
            "n": self.n,
            "q": self.q,
            "s": self.s,
            "p": self.p,
            "c_coeffs": [m.tolist() for m in self.c.coeffs],
            "d_coeffs": [m.tolist() for m in self.d.coeffs],
        }
        return json.dumps(payload)

    @staticmethod
    def from_json(text: str) -> "RmfdModel":
        payload = json.loads(text)
        return RmfdModel(
            c=PolyMatrix(payload["c_coeffs"]),
            d=PolyMatrix(payload["d_coeffs"]),
            gamma=KroneckerIndices(tuple(payload["gamma"])),
        )


@dataclass(frozen=True)
class RestrictionTemplate:
    """Affine parameter map vec(L) = H theta + h for a constrained matrix L.

    H is a 0/1 selection matrix with one unit entry per column and h holds
    the fixed entries (zeros and ones).  Internally only the free positions
    and the fixed-value matrix are stored; H and h are materialized on
    demand.  vec() uses column stacking.
    """

    target_shape: tuple[int, int]
    free_rows: np.ndarray
    free_cols: np.ndarray
    fixed: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "free_rows", np.asarray(self.free_rows, dtype=int))
        object.__setattr__(self, "free_cols", np.asarray(self.free_cols, dtype=int))
        object.__setattr__(self, "fixed", _frozen(self.fixed))

    @property
    def free_count(self) -> int:
        return int(self.free_rows.size)

    @property
    def free_mask(self) -> np.ndarray:
        mask = np.zeros(self.target_shape, dtype=bool)
        mask[self.free_rows, self.free_cols] = True
        return mask

    @property
    def H(self) -> np.ndarray:
        r, c = self.target_shape
        out = np.zeros((r * c, self.free_count))
        vec_idx = self.free_cols * r + self.free_rows
        out[vec_idx, np.arange(self.free_count)] = 1.0
        return out

    @property
    def h(self) -> np.ndarray:
        return self.fixed.flatten(order="F")

    def reconstruct(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.free_count,):
            raise EchelonError(
                f"theta has length {theta.size}, template expects {self.free_count}"
            )
        out = self.fixed.copy()
        out[self.free_rows, self.free_cols] = theta
        return out

    def extract(self, mat: np.ndarray) -> np.ndarray:
        mat = np.asarray(mat, dtype=float)
        if mat.shape != self.target_shape:
            raise EchelonError(
                f"matrix shape {mat.shape} does not match template {self.target_shape}"
            )
        return mat[self.free_rows, self.free_cols].copy()


@dataclass(frozen=True)
class StateSpaceModel:
    """State-space system s_t = A s_{t-1} + B eps_t, x_t = C s_t + xi_t.

    Canonical RMFD assemblies have B = [I_q; 0] and a companion A; the
    subspace initializer also uses this container for unrestricted systems
    (general B, larger shock covariance).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    sigma_eps: np.ndarray
    sigma_xi: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "A", _frozen(self.A))
        object.__setattr__(self, "B", _frozen(self.B))
        object.__setattr__(self, "C", _frozen(self.C))
        object.__setattr__(self, "sigma_eps", _frozen(np.atleast_2d(self.sigma_eps)))
        object.__setattr__(self, "sigma_xi", float(self.sigma_xi))
        m = self.A.shape[0]
        if self.A.shape != (m, m):
            raise EchelonError("A must be square")
        if self.B.shape[0] != m or self.C.shape[1] != m:
            raise EchelonError("B and C must conform with the state dimension")
        if self.sigma_eps.shape != (self.B.shape[1],) * 2:
            raise EchelonError("sigma_eps must be (shock dim) x (shock dim)")

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_obs(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class CrossLink:
    """Shared zero-lag parameter c_{kl,0} = d_{kl,0} (0-based row/col/lag)."""

    c_entry: tuple[int, int, int]
    d_entry: tuple[int, int, int]


# ---------------------------------------------------------------------------
# Free/fixed pattern of the RMFD-E
# ---------------------------------------------------------------------------


def _c_free_lags(gamma: Sequence[int], k: int, l: int) -> range:
    """Free lags of the (k, l) entry of c(z), 0-based indices.

    Diagonal entries are unity at lag 0 and free through gamma_l; above the
    diagonal the window may reach lag 0 (the shared-entry case), below it
    starts at lag 1.
    """
    gl, gk = gamma[l], gamma[k]
    if k == l:
        return range(1, gl + 1)
    lo = max(0 if k < l else 1, gl - gk + 1)
    return range(lo, gl + 1)


def _c0_pattern(gamma: Sequence[int]) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Zero-lag matrix of c(z): fixed values and free (shared) positions."""
    q = len(gamma)
    fixed = np.eye(q)
    free: list[tuple[int, int]] = []
    for l in range(q):
        for k in range(q):
            if k != l and 0 in _c_free_lags(gamma, k, l):
                free.append((k, l))
    return fixed, free


def build_templates(
    gamma,
    n: int,
    q: int | None = None,
    s_cap: int | None = None,
    p_cap: int | None = None,
) -> tuple[RestrictionTemplate, RestrictionTemplate, list[CrossLink]]:
    """Restriction templates for the state-space matrices C and A.

    C stacks the loading coefficients (d_0, ..., d_{nb-1}) and A is the
    companion matrix whose first q rows carry the VAR coefficients; nb is
    kappa+1 when s >= p and kappa otherwise (reduced state).  Entries of
    d beyond s_cap and of c beyond p_cap are fixed to zero.  Free zero-lag
    entries shared between c and d are owned by the C template and reported
    in cross_links.
    """
    gamma = as_indices(gamma)
    if q is not None and q != gamma.q:
        raise EchelonError(f"q={q} does not match len(gamma)={gamma.q}")
    q = gamma.q
    if n < q:
        raise EchelonError(f"need n >= q, got n={n}, q={q}")
    kappa = gamma.kappa
    if kappa < 1:
        raise EchelonError("templates require kappa >= 1 (some gamma_l > 0)")
    s = kappa if s_cap is None else int(s_cap)
    p = kappa if p_cap is None else int(p_cap)
    if not 0 <= s <= kappa:
        raise EchelonError(f"s_cap={s} must lie in [0, kappa={kappa}]")
    if not 1 <= p <= kappa:
        raise EchelonError(f"p_cap={p} must lie in [1, kappa={kappa}]")
    nb = kappa + 1 if s >= p else kappa
    m = nb * q
    g = tuple(gamma)

    c0_fixed, c0_free = _c0_pattern(g)

    # C template over (n, nb*q): block j holds d_j.
    free_r: list[int] = []
    free_c: list[int] = []
    fixed_C = np.zeros((n, m))
    for j in range(nb):
        for l in range(q):
            col = j * q + l
            for k in range(n):
                if j == 0:
                    if k < q:
                        if (k, l) in c0_free:
                            free_r.append(k)
                            free_c.append(col)
                        else:
                            fixed_C[k, col] = c0_fixed[k, l]
                    else:
                        free_r.append(k)
                        free_c.append(col)
                    continue
                if j > s or j > g[l]:
                    continue  # fixed zero
                free_r.append(k)
                free_c.append(col)
    order = np.lexsort((np.asarray(free_r), np.asarray(free_c)))
    template_C = RestrictionTemplate(
        target_shape=(n, m),
        free_rows=np.asarray(free_r)[order],
        free_cols=np.asarray(free_c)[order],
        fixed=fixed_C,
    )

    # A template over (m, m): first q rows carry the VAR coefficients,
    # remaining rows are the fixed companion shift.
    free_r = []
    free_c = []
    fixed_A = np.zeros((m, m))
    fixed_A[q:, : m - q] = np.eye(m - q)
    for i in range(1, nb + 1):
        for l in range(q):
            col = (i - 1) * q + l
            for k in range(q):
                if i <= p and i in _c_free_lags(g, k, l):
                    free_r.append(k)
                    free_c.append(col)
    order = np.lexsort((np.asarray(free_r), np.asarray(free_c)))
    template_A = RestrictionTemplate(
        target_shape=(m, m),
        free_rows=np.asarray(free_r)[order],
        free_cols=np.asarray(free_c)[order],
        fixed=fixed_A,
    )

    links = [CrossLink(c_entry=(k, l, 0), d_entry=(k, l, 0)) for k, l in c0_free]
    return template_C, template_A, links


def count_free_params(
    gamma,
    n: int,
    q: int | None = None,
    s_cap: int | None = None,
    p_cap: int | None = None,
) -> int:
    """Total free entries in c(z) and d(z); shared entries counted once."""
    tC, tA, _ = build_templates(gamma, n, q, s_cap, p_cap)
    return tC.free_count + tA.free_count


# ---------------------------------------------------------------------------
# State-space assembly and impulse responses
# ---------------------------------------------------------------------------


def _normalize_c0(model: RmfdModel) -> tuple[PolyMatrix, PolyMatrix]:
    """Post-multiply (c, d) by c0^{-1} so the VAR polynomial starts at I_q."""
    c0 = model.c.coeff(0)
    try:
        c0_inv = np.linalg.inv(c0)
    except np.linalg.LinAlgError as exc:
        raise EchelonError("c(0) is singular; cannot normalize") from exc
    if np.allclose(c0, np.eye(model.q)):
        return model.c, model.d
    c_new = PolyMatrix(np.einsum("jkl,lm->jkm", model.c.coeffs, c0_inv))
    d_new = PolyMatrix(np.einsum("jkl,lm->jkm", model.d.coeffs, c0_inv))
    return c_new, d_new


def assemble_statespace(model: RmfdModel, sigma_eps, sigma_xi: float) -> StateSpaceModel:
    """Companion state-space form of an RMFD model.

    The state stacks current and lagged dynamic factors.  When the loading
    degree s is strictly smaller than the VAR degree p the trailing factor
    lag never enters the observation equation and the state dimension drops
    from (kappa+1)q to kappa q.
    """
    c, d = _normalize_c0(model)
    q, n = model.q, model.n
    p = c.degree
    s = d.degree
    kappa = max(p, s)
    if kappa < 1:
        raise EchelonError("state-space form requires kappa >= 1")
    nb = kappa + 1 if s >= p else kappa
    m = nb * q
    A = np.zeros((m, m))
    A[q:, : m - q] = np.eye(m - q)
    for i in range(1, min(p, nb) + 1):
        A[:q, (i - 1) * q : i * q] = -c.coeff(i)
    B = np.zeros((m, q))
    B[:q] = np.eye(q)
    C = np.zeros((n, m))
    for j in range(min(s, nb - 1) + 1):
        C[:, j * q : (j + 1) * q] = d.coeff(j)
    return StateSpaceModel(A=A, B=B, C=C, sigma_eps=np.asarray(sigma_eps, dtype=float), sigma_xi=sigma_xi)


def irf_rmfd(model: RmfdModel, horizon: int) -> PolyMatrix:
    """IRF coefficients k_j of k(z) = d(z) c(z)^{-1} by the lag recursion.

    With raw storage c(z) = c0 + C1 z + ..., the recursion reads
    k_j = (d_j - sum_i k_{j-i} C_i) c0^{-1}; for c0 = I and VAR-form
    coefficients c_i = -C_i this is k_j = k_{j-1} c_1 + ... + d_j.
    """
    if horizon < 0:
        raise EchelonError("horizon must be non-negative")
    c0 = model.c.coeff(0)
    try:
        c0_inv = np.linalg.inv(c0)
    except np.linalg.LinAlgError as exc:
        raise EchelonError("c(0) is singular") from exc
    p = model.p
    ks = np.zeros((horizon + 1, model.n, model.q))
    for j in range(horizon + 1):
        acc = model.d.coeff(j).copy()
        for i in range(1, min(j, p) + 1):
            acc -= ks[j - i] @ model.c.coeff(i)
        ks[j] = acc @ c0_inv
    return PolyMatrix(ks)


def irf_statespace(ss: StateSpaceModel, horizon: int) -> PolyMatrix:
    """IRF coefficients k_j = C A^j B of a state-space system."""
    if horizon < 0:
        raise EchelonError("horizon must be non-negative")
    ks = np.zeros((horizon + 1, ss.n_obs, ss.B.shape[1]))
    M = ss.B.copy()
    for j in range(horizon + 1):
        ks[j] = ss.C @ M
        M = ss.A @ M
    return PolyMatrix(ks)


def is_minimal(ss: StateSpaceModel, rank_tol: float | None = None) -> bool:
    """True iff the observability and controllability matrices have full rank.

    Both matrices stack powers of A up to state dimension minus one; rank is
    judged by a singular-value cut at max(dim) * eps * sigma_max unless an
    absolute tolerance is supplied.
    """
    m = ss.state_dim
    obs_blocks = []
    ctr_blocks = []
    Mo = ss.C.copy()
    Mc = ss.B.copy()
    for _ in range(m):
        obs_blocks.append(Mo)
        ctr_blocks.append(Mc)
        Mo = Mo @ ss.A
        Mc = ss.A @ Mc
    obs = np.vstack(obs_blocks)
    ctr = np.hstack(ctr_blocks)
    tol = rank_tol
    r_obs = np.linalg.matrix_rank(obs, tol=tol)
    r_ctr = np.linalg.matrix_rank(ctr, tol=tol)
    return bool(r_obs == m and r_ctr == m)


def apply_unimodular(model: RmfdModel, m: PolyMatrix) -> RmfdModel:
    """Post-multiply (c, d) by a polynomial matrix with det m(0) != 0.

    The IRF is invariant under this transformation; the returned model is
    generally not canonical and keeps gamma for bookkeeping only.
    """
    m = m if isinstance(m, PolyMatrix) else PolyMatrix(m)
    if m.rows != model.q or m.cols != model.q:
        raise EchelonError("transformation must be q x q")
    m0 = m.coeff(0)
    if abs(np.linalg.det(m0)) < 1e-12 * max(1.0, np.max(np.abs(m0)) ** model.q):
        raise EchelonError("m(0) is singular")
    return RmfdModel(c=model.c * m, d=model.d * m, gamma=model.gamma)


# ---------------------------------------------------------------------------
# Realization: truncated IRF -> canonical RMFD
# ---------------------------------------------------------------------------


def _block_hankel(ks: np.ndarray, f: int, g: int) -> np.ndarray:
    """Block Hankel of (k_1, k_2, ...): block (i, j) holds k_{i+j+1} (0-based)."""
    _, n, q = ks.shape
    H = np.empty((f * n, g * q))
    for i in range(f):
        for j in range(g):
            H[i * n : (i + 1) * n, j * q : (j + 1) * q] = ks[i + j + 1]
    return H


def _select_basis(H: np.ndarray, q: int, g: int, tol: float) -> tuple[np.ndarray, list[int]]:
    """First column basis of the Hankel, left to right, with no holes.

    Returns the Kronecker indices read off the selection and the list of
    retained global column indices.
    """
    gamma = np.zeros(q, dtype=int)
    alive = np.ones(q, dtype=bool)
    basis_cols: list[int] = []
    Q = np.zeros((H.shape[0], 0))
    for b in range(g):
        if not alive.any():
            break
        for v in range(q):
            if not alive[v]:
                continue
            idx = b * q + v
            col = H[:, idx]
            resid = col - Q @ (Q.T @ col)
            # second orthogonalization pass for numerical safety
            resid = resid - Q @ (Q.T @ resid)
            nrm = np.linalg.norm(resid)
            if nrm > tol:
                Q = np.column_stack([Q, resid / nrm])
                basis_cols.append(idx)
                gamma[v] = b + 1
            else:
                alive[v] = False
    if alive.any():
        raise EchelonError(
            "Hankel column basis did not close within the available blocks; "
            "increase the number of IRF lags"
        )
    return gamma, basis_cols


def _solve_ctilde(H: np.ndarray, gamma: Sequence[int], q: int) -> np.ndarray:
    """Coefficients of the reversed-form polynomial from the Hankel kernel.

    For each column j the first dependent column s(gamma_j+1, j) is written
    as a combination of designated basis columns; the normalization puts a
    unit coefficient on the dependent column itself.  Returns an array of
    shape (kappa+1, q, q) with entry [beta, alpha, j].
    """
    kappa = int(max(gamma))
    ct = np.zeros((kappa + 2, q, q))
    for j in range(q):
        gj = gamma[j]
        cols: list[int] = []
        pos: list[tuple[int, int]] = []  # (alpha, lag beta-1)
        for alpha in range(q):
            upper = min(gj + 1, gamma[alpha]) if alpha < j else min(gj, gamma[alpha])
            for beta in range(1, upper + 1):
                cols.append((beta - 1) * q + alpha)
                pos.append((alpha, beta - 1))
        rhs = -H[:, gj * q + j]
        if cols:
            Amat = H[:, cols]
            sol, *_ = np.linalg.lstsq(Amat, rhs, rcond=None)
            for (alpha, lag), val in zip(pos, sol):
                ct[lag, alpha, j] = val
        ct[gj, j, j] = 1.0
    return ct[: kappa + 1]


def echelon_realize(
    k: PolyMatrix,
    rank_tol: float | None = None,
    gamma=None,
) -> RmfdModel:
    """Realize the canonical reversed-echelon (c, d) pair from a truncated IRF.

    The IRF is normalized so that the top q x q block of k_0 is the identity
    (the realized model reproduces k(z) k_0[:q]^{-1}).  When gamma is given
    the basis-selection step is skipped and the designated least-squares
    solve is used directly, which is the right mode for noisy input; when it
    is omitted the Kronecker indices are read off the Hankel column basis and
    verified for stabilization against one fewer block column.
    """
    k = k if isinstance(k, PolyMatrix) else PolyMatrix(k)
    n, q = k.rows, k.cols
    if n < q:
        raise EchelonError("IRF must be tall (n >= q)")
    N = k.degree
    ks = k.coeffs.copy()
    top = ks[0][:q, :]
    sv = np.linalg.svd(top, compute_uv=False)
    if sv[-1] <= max(n, q) * np.finfo(float).eps * max(sv[0], 1.0):
        raise EchelonError("first q rows of k_0 are (numerically) rank deficient")
    if not np.allclose(top, np.eye(q)):
        ks = np.einsum("jkl,lm->jkm", ks, np.linalg.inv(top))

    if gamma is not None:
        gamma = as_indices(gamma)
        if gamma.q != q:
            raise EchelonError("gamma length must equal the number of IRF columns")
        kappa = gamma.kappa
        g = kappa + 1
        f = N - g + 1
        if f < 1:
            raise EchelonError(f"need at least {g} IRF lags for kappa={kappa}")
        H = _block_hankel(ks, f, g)
        ct = _solve_ctilde(H, tuple(gamma), q)
        gam = np.asarray(tuple(gamma), dtype=int)
    else:
        if N < 2:  # a constant input is read as the complete (finite) IRF
            ks = np.concatenate([ks, np.zeros((2 - N, n, q))], axis=0)
            N = 2
        g = (N + 1) // 2
        f = N + 1 - g
        H = _block_hankel(ks, f, g)
        scale = np.linalg.norm(H, 2) if H.size else 0.0
        if scale == 0.0:
            gam = np.zeros(q, dtype=int)
        else:
            tol = (max(H.shape) * np.finfo(float).eps if rank_tol is None else rank_tol) * scale
            gam, _ = _select_basis(H, q, g, tol)
            gam2, _ = _select_basis(H[:, : (g - 1) * q], q, g - 1, tol)
            if not np.array_equal(gam, gam2):
                raise EchelonError(
                    f"Kronecker indices did not stabilize under truncation: {tuple(gam)} vs "
                    f"{tuple(gam2)}; adjust rank_tol or supply more lags"
                )
        ct = _solve_ctilde(H, tuple(gam), q)
        kappa = int(gam.max())

    # d-tilde from the non-negative powers of k-tilde(z) c-tilde(z):
    # dt_i = sum_{j>=1} k_j ct_{i+j}, i = 0..kappa-1.
    dt = np.zeros((kappa + 1, n, q))
    for i in range(kappa):
        for j in range(1, kappa - i + 1):
            dt[i] += ks[j] @ ct[i + j]

    # Reversal: column l of c picks ct reversed at gamma_l; d adds k_0 ct.
    c_arr = np.zeros((kappa + 1, q, q))
    d_arr = np.zeros((kappa + 1, n, q))
    k0 = ks[0]
    for l in range(q):
        gl = int(gam[l])
        for i in range(gl + 1):
            c_arr[i, :, l] = ct[gl - i, :, l]
            d_arr[i, :, l] = k0 @ ct[gl - i, :, l] + dt[gl - i, :, l]
    return RmfdModel(
        c=PolyMatrix(c_arr), d=PolyMatrix(d_arr), gamma=KroneckerIndices(tuple(int(v) for v in gam))
    )
