"""Structural shocks, unit conversion and bootstrap confidence bands.

Identification is recursive: the impact matrix is the lower Cholesky
factor of the shock covariance, one column of which is traced through the
model IRF.  Responses estimated on standardized, differenced data are
mapped back to original units by rescaling each row with its standard
deviation and cumulating according to the variable's transform code, and
the shock size is pinned by normalizing the impact response of a chosen
variable.  Uncertainty comes from a non-overlapping block bootstrap that
re-runs the whole estimation pipeline on each resampled panel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed

from . import em as em_mod
from . import init as init_mod
from . import kalman
from .echelon import RmfdModel, assemble_statespace, irf_rmfd
from .modelsel import CandidateSpec


class StructuralError(RuntimeError):
    pass


# transform code -> number of cumulations needed to undo the differencing
_CUMULATE = {1: 0, 4: 0, 2: 1, 5: 1, 7: 1, 3: 2, 6: 2}


@dataclass(frozen=True)
class StructuralIrf:
    """Responses to one structural shock, horizon by variable.

    responses has shape (horizon+1, n); normalization records the
    (variable index, impact size) pair once a normalization is applied.
    """

    responses: np.ndarray
    shock_label: str = "shock"
    normalization: tuple[int, float] | None = None

    def __post_init__(self) -> None:
        arr = np.array(self.responses, dtype=float)
        if arr.ndim != 2:
            raise StructuralError("responses must be (horizon+1) x n")
        arr.setflags(write=False)
        object.__setattr__(self, "responses", arr)

    @property
    def horizon(self) -> int:
        return self.responses.shape[0] - 1


@dataclass(frozen=True)
class BootstrapBands:
    lower: np.ndarray
    upper: np.ndarray
    level: float
    draws: int
    n_failed: int = 0


def cholesky_identify(sigma_eps: np.ndarray) -> np.ndarray:
    """Lower-triangular impact matrix H with H H' = sigma_eps.

    A PSD input that fails the plain factorization gets one round of
    diagonal jitter before being declared indefinite.
    """
    S = np.asarray(sigma_eps, dtype=float)
    S = 0.5 * (S + S.T)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(S)
        if w[0] < -1e-8 * max(abs(w[-1]), 1.0):
            raise StructuralError("shock covariance is indefinite")
        jitter = (abs(w[0]) + 1e-12 * max(abs(w[-1]), 1.0)) * np.eye(S.shape[0])
        return np.linalg.cholesky(S + jitter)


def structural_irf(
    model: RmfdModel,
    H: np.ndarray,
    shock_col: int,
    horizon: int,
    normalize: tuple[int, float] | None = None,
    shock_label: str = "shock",
) -> StructuralIrf:
    """Responses of all variables to one column of the impact matrix."""
    H = np.asarray(H, dtype=float)
    if not 0 <= shock_col < model.q:
        raise StructuralError(f"shock_col={shock_col} outside 0..{model.q - 1}")
    k = irf_rmfd(model, horizon)
    resp = k.coeffs @ H[:, shock_col]
    irf = StructuralIrf(responses=resp, shock_label=shock_label)
    if normalize is not None:
        irf = normalize_response(irf, normalize[0], normalize[1])
    return irf


def normalize_response(irf: StructuralIrf, var_idx: int, size: float) -> StructuralIrf:
    """Scale the whole response so variable var_idx reacts by size at impact."""
    n = irf.responses.shape[1]
    if not 0 <= var_idx < n:
        raise StructuralError(f"var_idx={var_idx} outside 0..{n - 1}")
    impact = irf.responses[0, var_idx]
    scale_ref = np.max(np.abs(irf.responses[0])) or 1.0
    if abs(impact) < 1e-12 * scale_ref:
        raise StructuralError(
            f"impact response of variable {var_idx} is zero; cannot normalize"
        )
    return replace(
        irf,
        responses=irf.responses * (size / impact),
        normalization=(var_idx, float(size)),
    )


def finalize_irf(irf: StructuralIrf, sds, tcodes) -> StructuralIrf:
    """Map standardized responses back to original units.

    Each row is rescaled by its standard deviation; first-difference codes
    are cumulated once, second-difference codes twice, level codes are left
    alone.  An existing normalization tag is dropped (re-normalize after).
    """
    resp = np.array(irf.responses)
    n = resp.shape[1]
    sds = np.asarray(sds, dtype=float)
    tcodes = np.asarray(tcodes, dtype=int)
    if sds.shape != (n,) or tcodes.shape != (n,):
        raise StructuralError("sds and tcodes must have one entry per variable")
    resp *= sds
    for i, code in enumerate(tcodes):
        if code not in _CUMULATE:
            raise StructuralError(f"unknown transform code {code} for variable {i}")
        for _ in range(_CUMULATE[code]):
            resp[:, i] = np.cumsum(resp[:, i])
    return StructuralIrf(responses=resp, shock_label=irf.shock_label, normalization=None)


@dataclass(frozen=True)
class BootstrapOptions:
    draws: int = 500
    block_len: int = 52
    level: float = 0.68
    seed: int | None = None
    shock_col: int = 2
    normalize: tuple[int, float] | None = None
    horizon: int = 48
    warm_start: bool = False
    jobs: int = 1
    em: em_mod.EmOptions | None = None
    max_failure_rate: float = 0.2


def _pipeline_irf(
    values: np.ndarray,
    tcodes: np.ndarray,
    spec: CandidateSpec,
    opts: BootstrapOptions,
    seed,
    warm_init=None,
) -> np.ndarray:
    """Standardize, estimate, identify, finalize; returns the response array."""
    mean = values.mean(axis=0)
    sd = values.std(axis=0, ddof=0)
    if np.any(sd <= 0):
        raise init_mod.InitError("constant column in resampled panel")
    Xs = (values - mean) / sd
    q = spec.gamma.q
    if warm_init is not None:
        ss0 = warm_init
    else:
        cca = init_mod.CcaOptions.for_model(spec.state_dim, q, seed=seed)
        model0, Se0, sx0 = init_mod.initial_model(
            Xs, spec.gamma, q, s_cap=spec.s, p_cap=spec.p, opts=cca
        )
        ss0 = assemble_statespace(model0, Se0, sx0)
    model, Se, sx, _ = em_mod.em_estimate(
        Xs, spec.gamma, s_cap=spec.s, p_cap=spec.p, init=ss0, opts=opts.em
    )
    H = cholesky_identify(Se)
    irf = structural_irf(model, H, opts.shock_col, opts.horizon)
    irf = finalize_irf(irf, sd, tcodes)
    if opts.normalize is not None:
        irf = normalize_response(irf, opts.normalize[0], opts.normalize[1])
    return np.array(irf.responses)


def _one_draw(values, tcodes, spec, opts, seed_entropy, warm_init):
    rng = np.random.default_rng(seed_entropy)
    T = values.shape[0]
    nb = T // opts.block_len
    pool = [values[i * opts.block_len : (i + 1) * opts.block_len] for i in range(nb)]
    n_pick = int(np.ceil(T / opts.block_len))
    picks = rng.integers(0, nb, size=n_pick)
    resampled = np.concatenate([pool[i] for i in picks], axis=0)[:T]
    try:
        return _pipeline_irf(
            resampled, tcodes, spec, opts, seed=int(rng.integers(2**31)), warm_init=warm_init
        )
    except (init_mod.InitError, em_mod.EstimationError, kalman.FilterError, StructuralError) as exc:
        return str(exc)


def block_bootstrap(panel, spec: CandidateSpec, opts: BootstrapOptions) -> BootstrapBands:
    """Pointwise percentile bands from a non-overlapping block bootstrap.

    The panel is the transformed (not yet standardized) data; every draw
    resamples full blocks with replacement, trims to the original length,
    re-standardizes and re-runs initialization, EM, identification and unit
    conversion.  Draws that fail to estimate are dropped and counted; more
    than max_failure_rate failures aborts.
    """
    values = kalman._as_values(panel)
    tcodes = np.asarray(
        getattr(panel, "tcodes", np.ones(values.shape[1], dtype=int)), dtype=int
    )
    T = values.shape[0]
    if T < 2 * opts.block_len:
        raise StructuralError(
            f"T={T} too short for block length {opts.block_len} (need at least two blocks)"
        )
    warm_init = None
    if opts.warm_start:
        warm_init = _warm_start_init(values, tcodes, spec, opts)

    seeds = np.random.SeedSequence(opts.seed).spawn(opts.draws)
    if opts.jobs > 1:
        results = Parallel(n_jobs=opts.jobs)(
            delayed(_one_draw)(values, tcodes, spec, opts, s, warm_init) for s in seeds
        )
    else:
        results = [_one_draw(values, tcodes, spec, opts, s, warm_init) for s in seeds]

    paths = [r for r in results if isinstance(r, np.ndarray)]
    errors = [r for r in results if isinstance(r, str)]
    if len(errors) > opts.max_failure_rate * opts.draws:
        raise StructuralError(
            f"{len(errors)}/{opts.draws} bootstrap draws failed; examples: {errors[:3]}"
        )
    stack = np.stack(paths, axis=0)
    alpha = (1.0 - opts.level) / 2.0
    lower = np.percentile(stack, 100 * alpha, axis=0)
    upper = np.percentile(stack, 100 * (1 - alpha), axis=0)
    return BootstrapBands(
        lower=lower, upper=upper, level=opts.level, draws=opts.draws, n_failed=len(errors)
    )


def _warm_start_init(values, tcodes, spec, opts):
    mean = values.mean(axis=0)
    sd = values.std(axis=0, ddof=0)
    Xs = (values - mean) / sd
    q = spec.gamma.q
    cca = init_mod.CcaOptions.for_model(spec.state_dim, q, seed=opts.seed)
    model0, Se0, sx0 = init_mod.initial_model(
        Xs, spec.gamma, q, s_cap=spec.s, p_cap=spec.p, opts=cca
    )
    return assemble_statespace(model0, Se0, sx0)
