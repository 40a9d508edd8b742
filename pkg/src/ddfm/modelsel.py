"""Candidate enumeration and information-criterion ranking.

Given user-supplied factor dimensions q (dynamic) and r (static), the
admissible Kronecker structures follow from the maximum-index estimator
kappa_hat: the lag orders (p, s) are pinned to (1, 1) for kappa = 1 and
(kappa, 1) otherwise, every weakly increasing index vector over {1..kappa}
with maximum kappa is a candidate, and generically non-minimal structures
are dropped.  Candidates are estimated by EM and ranked by AIC/BIC/HQIC on
the per-observation-scaled log likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from . import em as em_mod
from . import init as init_mod
from . import kalman
from .echelon import (
    KroneckerIndices,
    as_indices,
    assemble_statespace,
    build_templates,
    count_free_params,
    is_minimal,
)


class ModelSelectionError(ValueError):
    pass


@dataclass(frozen=True)
class CandidateSpec:
    gamma: KroneckerIndices
    p: int
    s: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "gamma", as_indices(self.gamma))
        if not self.gamma.is_weakly_increasing:
            raise ModelSelectionError("candidate gamma must be weakly increasing")
        if self.p < 1 or self.s < 1:
            raise ModelSelectionError("candidate lag orders must be positive")
        if max(self.p, self.s) != self.gamma.kappa:
            raise ModelSelectionError("max(p, s) must equal the maximum Kronecker index")

    @property
    def state_dim(self) -> int:
        nb = self.gamma.kappa + 1 if self.s >= self.p else self.gamma.kappa
        return nb * self.gamma.q


@dataclass
class SelectionRow:
    spec: CandidateSpec
    loglik_scaled: float
    aic: float
    bic: float
    hqic: float
    n_params: int
    converged: bool
    error: str | None = None


def kappa_hat(r: int, q: int, s_ge_p: bool) -> int:
    """Maximum Kronecker index implied by the static/dynamic factor dimensions."""
    if not r >= q >= 1:
        raise ModelSelectionError(f"need r >= q >= 1, got r={r}, q={q}")
    k = r // q - (1 if s_ge_p else 0)
    if k < 1:
        raise ModelSelectionError(
            f"kappa_hat={k} < 1 for r={r}, q={q}, s>=p={s_ge_p}: degenerate specification"
        )
    return k


def default_lag_orders(kappa: int) -> tuple[int, int]:
    """(p, s) convention per candidate: (1, 1) for kappa=1, else (kappa, 1)."""
    return (1, 1) if kappa == 1 else (kappa, 1)


def _weakly_increasing(q: int, kappa: int):
    def rec(prefix, lo):
        if len(prefix) == q:
            yield tuple(prefix)
            return
        for v in range(lo, kappa + 1):
            yield from rec(prefix + [v], v)

    yield from rec([], 1)


def _generically_minimal(spec: CandidateSpec, seed: int = 0) -> bool:
    """Minimality of a random draw from the candidate's templates."""
    rng = np.random.default_rng(seed)
    q = spec.gamma.q
    n = spec.state_dim + q  # any tall n works for the generic check
    tC, tA, _ = build_templates(spec.gamma, n, q, s_cap=spec.s, p_cap=spec.p)
    A = tA.reconstruct(rng.normal(size=tA.free_count))
    A = em_mod.stabilize_companion(A, q, radius=0.9)
    C = tC.reconstruct(rng.normal(size=tC.free_count))
    m = spec.state_dim
    B = np.zeros((m, q))
    B[:q] = np.eye(q)
    from .echelon import StateSpaceModel

    ss = StateSpaceModel(A=A, B=B, C=C, sigma_eps=np.eye(q), sigma_xi=1.0)
    return is_minimal(ss)


def enumerate_admissible(
    q: int,
    r: int,
    lag_rule=default_lag_orders,
    check_minimal: bool = True,
    seed: int = 0,
) -> list[CandidateSpec]:
    """All admissible Kronecker structures for the given factor dimensions.

    Both branches of kappa_hat are taken where they give kappa >= 1; the
    index vectors run over weakly increasing tuples with maximum exactly
    kappa and indices at least one (zero indices would make a factor
    column static and the companion system non-minimal).
    """
    if not r >= q >= 1:
        raise ModelSelectionError(f"need r >= q >= 1, got r={r}, q={q}")
    kappas = sorted({k for k in (r // q, r // q - 1) if k >= 1})
    out: list[CandidateSpec] = []
    seen = set()
    for k in kappas:
        p, s = lag_rule(k)
        if max(p, s) != k:
            continue
        for gam in _weakly_increasing(q, k):
            if max(gam) != k or (gam, p, s) in seen:
                continue
            seen.add((gam, p, s))
            spec = CandidateSpec(gamma=KroneckerIndices(gam), p=p, s=s)
            if check_minimal and not _generically_minimal(spec, seed=seed):
                continue
            out.append(spec)
    if not out:
        raise ModelSelectionError(f"no admissible structures for q={q}, r={r}")
    out.sort(key=lambda c: (c.gamma.kappa, c.gamma.gamma))
    return out


def info_criteria(loglik_scaled: float, k: int, T: int) -> tuple[float, float, float]:
    """AIC/BIC/HQIC on the per-observation-scaled log likelihood."""
    if T <= 1:
        raise ModelSelectionError("T must exceed 1")
    if k < 0:
        raise ModelSelectionError("k must be non-negative")
    base = -2.0 * loglik_scaled
    aic = base + 2.0 * k / T
    bic = base + k * math.log(T) / T
    hqic = base + 2.0 * k * math.log(math.log(T)) / T
    return aic, bic, hqic


def _estimate_candidate(X, spec: CandidateSpec, em_opts, cca_opts, seed) -> SelectionRow:
    T, n = X.shape
    q = spec.gamma.q
    try:
        opts = cca_opts or init_mod.CcaOptions.for_model(spec.state_dim, q, seed=seed)
        model0, Se0, sx0 = init_mod.initial_model(
            X, spec.gamma, q, s_cap=spec.s, p_cap=spec.p, opts=opts
        )
        ss0 = assemble_statespace(model0, Se0, sx0)
        model, Se, sx, trace = em_mod.em_estimate(
            X, spec.gamma, s_cap=spec.s, p_cap=spec.p, init=ss0, opts=em_opts
        )
        ll = trace.loglik[-1] / T
        k = count_free_params(spec.gamma, n, q, s_cap=spec.s, p_cap=spec.p)
        aic, bic, hqic = info_criteria(ll, k, T)
        return SelectionRow(
            spec=spec,
            loglik_scaled=ll,
            aic=aic,
            bic=bic,
            hqic=hqic,
            n_params=k,
            converged=trace.converged,
        )
    except (init_mod.InitError, em_mod.EstimationError, kalman.FilterError) as exc:
        k = count_free_params(spec.gamma, n, q, s_cap=spec.s, p_cap=spec.p)
        return SelectionRow(
            spec=spec,
            loglik_scaled=float("nan"),
            aic=float("inf"),
            bic=float("inf"),
            hqic=float("inf"),
            n_params=k,
            converged=False,
            error=str(exc),
        )


def select(
    X,
    q: int,
    r: int,
    em_opts: em_mod.EmOptions | None = None,
    cca_opts: init_mod.CcaOptions | None = None,
    criterion: str = "bic",
    jobs: int = 1,
    seed: int = 0,
) -> list[SelectionRow]:
    """Estimate every admissible candidate and rank by the chosen criterion.

    Ties break toward fewer parameters, then lexicographically smaller
    gamma.  Failed candidates sort last and carry their error message.
    """
    if criterion not in ("aic", "bic", "hqic"):
        raise ModelSelectionError(f"unknown criterion '{criterion}'")
    X = kalman._as_values(X)
    candidates = enumerate_admissible(q, r, seed=seed)
    if jobs > 1:
        rows = Parallel(n_jobs=jobs)(
            delayed(_estimate_candidate)(X, c, em_opts, cca_opts, seed + i)
            for i, c in enumerate(candidates)
        )
    else:
        rows = [
            _estimate_candidate(X, c, em_opts, cca_opts, seed + i)
            for i, c in enumerate(candidates)
        ]
    rows.sort(
        key=lambda row: (
            getattr(row, criterion),
            row.n_params,
            row.spec.gamma.gamma,
        )
    )
    return rows


def rows_to_csv(rows: list[SelectionRow]) -> str:
    """Selection table in the Table-1-shaped CSV layout."""
    lines = ["gamma,loglik,AIC,BIC,HQIC,n_params,p,s,converged"]
    for row in rows:
        gam = "(" + " ".join(str(v) for v in row.spec.gamma) + ")"
        lines.append(
            f"{gam},{row.loglik_scaled:.4f},{row.aic:.4f},{row.bic:.4f},"
            f"{row.hqic:.4f},{row.n_params},{row.spec.p},{row.spec.s},{row.converged}"
        )
    return "\n".join(lines) + "\n"
