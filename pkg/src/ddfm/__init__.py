"""Impulse-response estimation for dynamic factor models in echelon RMFD form."""

__version__ = "0.1.0"

from .echelon import (
    CrossLink,
    KroneckerIndices,
    PolyMatrix,
    RestrictionTemplate,
    RmfdModel,
    StateSpaceModel,
    apply_unimodular,
    assemble_statespace,
    build_templates,
    count_free_params,
    echelon_realize,
    irf_rmfd,
    irf_statespace,
    is_minimal,
)
from .em import EmOptions, EmTrace, em_estimate, m_step
from .kalman import FilterOutput, SmoothedMoments, SmootherOutput, filter, smooth, smoothed_moments
from .modelsel import CandidateSpec, SelectionRow, enumerate_admissible, info_criteria, kappa_hat, select
from .structural import (
    BootstrapBands,
    BootstrapOptions,
    StructuralIrf,
    block_bootstrap,
    cholesky_identify,
    finalize_irf,
    normalize_response,
    structural_irf,
)

__all__ = [
    "CrossLink",
    "KroneckerIndices",
    "PolyMatrix",
    "RestrictionTemplate",
    "RmfdModel",
    "StateSpaceModel",
    "apply_unimodular",
    "assemble_statespace",
    "build_templates",
    "count_free_params",
    "echelon_realize",
    "irf_rmfd",
    "irf_statespace",
    "is_minimal",
    "EmOptions",
    "EmTrace",
    "em_estimate",
    "m_step",
    "FilterOutput",
    "SmoothedMoments",
    "SmootherOutput",
    "filter",
    "smooth",
    "smoothed_moments",
    "CandidateSpec",
    "SelectionRow",
    "enumerate_admissible",
    "info_criteria",
    "kappa_hat",
    "select",
    "BootstrapBands",
    "BootstrapOptions",
    "StructuralIrf",
    "block_bootstrap",
    "cholesky_identify",
    "finalize_irf",
    "normalize_response",
    "structural_irf",
    "__version__",
]
