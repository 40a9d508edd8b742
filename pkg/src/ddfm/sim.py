"""Synthetic panels from a known dynamic factor data-generating process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kalman
from .echelon import PolyMatrix, RmfdModel, as_indices, assemble_statespace, build_templates
from .em import stabilize_companion


class SimulationError(ValueError):
    pass


def random_canonical_model(
    gamma,
    n: int,
    seed=None,
    scale: float = 0.5,
    radius: float = 0.6,
    s_cap: int | None = None,
    p_cap: int | None = None,
) -> RmfdModel:
    """Draw a stable canonical RMFD-E model from its restriction templates.

    Free entries are normal with the given scale; the VAR blocks are shrunk
    radially until the companion spectral radius is below radius.
    """
    gamma = as_indices(gamma)
    q, kappa = gamma.q, gamma.kappa
    rng = np.random.default_rng(seed)
    tC, tA, _ = build_templates(gamma, n, s_cap=s_cap, p_cap=p_cap)
    C = tC.reconstruct(rng.normal(scale=scale, size=tC.free_count))
    A = stabilize_companion(tA.reconstruct(rng.normal(scale=scale, size=tA.free_count)), q, radius)
    p = kappa if p_cap is None else int(p_cap)
    s = kappa if s_cap is None else int(s_cap)
    c = np.zeros((p + 1, q, q))
    c[0] = np.eye(q)
    links_mask = tC.free_mask[:q, :q]  # shared zero-lag entries, if any
    c[0][links_mask] = C[:q, :q][links_mask]
    for i in range(1, p + 1):
        c[i] = -A[:q, (i - 1) * q : i * q]
    d = np.zeros((s + 1, n, q))
    for j in range(s + 1):
        d[j] = C[:, j * q : (j + 1) * q]
    return RmfdModel(c=PolyMatrix(c), d=PolyMatrix(d), gamma=gamma)


@dataclass(frozen=True)
class DgpSpec:
    """A true model plus noise levels and sampling controls."""

    model: RmfdModel
    sigma_eps: np.ndarray
    sigma_xi: float
    T: int
    burn_in: int = 500
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.burn_in < 100:
            raise SimulationError("burn_in must be at least 100")
        if self.T < 1:
            raise SimulationError("T must be positive")


def simulate(spec: DgpSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (X, factors, structural shocks) from the DGP.

    Structural shocks u_t are standard normal; reduced-form shocks are
    H u_t with H the lower Cholesky factor of sigma_eps.  The factor VAR is
    propagated through the companion form, burn-in discarded.
    """
    model = spec.model
    ss = assemble_statespace(model, spec.sigma_eps, max(spec.sigma_xi, 0.0))
    if kalman.spectral_radius(ss.A) >= 1.0:
        raise SimulationError("unstable VAR polynomial in the DGP")
    rng = np.random.default_rng(spec.seed)
    q, n = model.q, model.n
    total = spec.T + spec.burn_in
    u = rng.standard_normal((total, q))
    H = np.linalg.cholesky(np.asarray(spec.sigma_eps, dtype=float))
    eps = u @ H.T

    m = ss.state_dim
    s = np.zeros(m)
    states = np.empty((total, m))
    for t in range(total):
        s = ss.A @ s + ss.B @ eps[t]
        states[t] = s
    common = states @ ss.C.T
    if spec.sigma_xi > 0:
        X = common + np.sqrt(spec.sigma_xi) * rng.standard_normal((total, n))
    else:
        X = common.copy()
    sl = slice(spec.burn_in, None)
    return X[sl], states[sl, :q], u[sl]
