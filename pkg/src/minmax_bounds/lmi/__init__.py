"""Semidefinite programs in standard conic form, their mechanical duals, and
pluggable solver backends (in-tree reference interior-point method plus an
optional cvxopt adapter)."""

from .builders import (
    DualCertificate,
    StageDominationEncoding,
    build_relaxation2,
    build_relaxation4,
    build_verify,
    encode_stage_domination,
)
from .program import ConicProgram
from .solve import (
    CvxoptBackend,
    ReferenceBackend,
    SolveResult,
    SolveStatus,
    SolverBackend,
    SolverError,
    solve,
)

__all__ = [
    "ConicProgram",
    "SolveResult",
    "SolveStatus",
    "SolverBackend",
    "SolverError",
    "ReferenceBackend",
    "CvxoptBackend",
    "solve",
    "build_relaxation4",
    "build_relaxation2",
    "build_verify",
    "encode_stage_domination",
    "StageDominationEncoding",
    "DualCertificate",
]
