"""Problem instances: definition, validation, random generation, persistence.

A problem instance collects the plant (A, B, G), the quadratic stage-cost data
(Q0, R0, gamma0), the discount factor alpha, the input constraint set U and
the disturbance ellipsoid W.  The stage cost is

    l(x, u, w) = x'Q0x + u'R0u - gamma0^2 w'w.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .config import DEFAULT_TOLERANCES
from .numerics import is_pd, is_psd, sym_sqrt, symmetrize

__all__ = [
    "ModelError",
    "DimensionError",
    "BoxInput",
    "FiniteInput",
    "QuadraticInput",
    "InputConstraint",
    "DisturbanceEllipsoid",
    "ProblemInstance",
    "ValidationReport",
    "validate",
    "discount_transform",
    "random_instance",
    "save",
    "load",
    "with_gamma",
]

SCHEMA_VERSION = 1


class ModelError(ValueError):
    """Malformed problem data (non-finite entries, bad documents, ...)."""


class DimensionError(ModelError):
    """Mutually inconsistent matrix dimensions."""


def _finite_array(x, name, shape=None):
    a = np.asarray(x, dtype=float)
    if shape is not None and a.shape != shape:
        raise DimensionError(f"{name}: expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ModelError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class BoxInput:
    """U = {u : |u_i| <= u_max_i}."""

    u_max: np.ndarray

    def __post_init__(self):
        u = _finite_array(self.u_max, "u_max")
        if u.ndim != 1 or np.any(u <= 0):
            raise ModelError("box input bounds must be a vector of positive reals")
        object.__setattr__(self, "u_max", u)

    @property
    def dim(self) -> int:
        return self.u_max.size

    def as_quadratic(self) -> "QuadraticInput":
        """Equivalent quadratic intersection: u'(e_i e_i')u - u_max_i^2 <= 0."""
        m = self.dim
        mats = [np.outer(np.eye(m)[i], np.eye(m)[i]) for i in range(m)]
        offs = [-float(self.u_max[i] ** 2) for i in range(m)]
        return QuadraticInput(R=mats, s=offs)

    def contains(self, u, tol=1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(np.abs(u) <= self.u_max * (1 + tol) + tol))


@dataclass(frozen=True)
class FiniteInput:
    """U = {u_1, ..., u_k}, a finite list of input vectors."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(_finite_array(self.points, "points"))
        if pts.shape[0] < 1:
            raise ModelError("finite input set needs at least one point")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def contains(self, u, tol=1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        d = np.linalg.norm(self.points - u[None, :], axis=1)
        return bool(np.min(d) <= tol * max(1.0, np.linalg.norm(u)))


@dataclass(frozen=True)
class QuadraticInput:
    """U contained in {u : u'R_i u + s_i <= 0 for all i}."""

    R: list
    s: list

    def __post_init__(self):
        if len(self.R) != len(self.s) or len(self.R) == 0:
            raise ModelError("quadratic input set needs matching, nonempty R and s lists")
        mats = [symmetrize(_finite_array(Ri, f"R[{i}]")) for i, Ri in enumerate(self.R)]
        m = mats[0].shape[0]
        for i, Ri in enumerate(mats):
            if Ri.shape != (m, m):
                raise DimensionError("quadratic input matrices must share one dimension")
            if not is_psd(Ri, 1e-10):
                raise ModelError(f"R[{i}] must be positive semidefinite")
        object.__setattr__(self, "R", mats)
        object.__setattr__(self, "s", [float(v) for v in self.s])

    @property
    def dim(self) -> int:
        return self.R[0].shape[0]

    def contains(self, u, tol=1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        vals = [float(u @ Ri @ u) + si for Ri, si in zip(self.R, self.s)]
        return bool(max(vals) <= tol * max(1.0, float(u @ u)))


InputConstraint = Union[BoxInput, FiniteInput, QuadraticInput]


@dataclass(frozen=True)
class DisturbanceEllipsoid:
    """W = {w : w'Sw <= beta}."""

    S: np.ndarray
    beta: float

    def __post_init__(self):
        S = symmetrize(_finite_array(self.S, "S"))
        if not is_pd(S, 1e-12):
            raise ModelError("disturbance shape matrix S must be positive definite")
        if not (self.beta > 0):
            raise ModelError("disturbance level beta must be positive")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def unit_ball(cls, dim: int) -> "DisturbanceEllipsoid":
        return cls(S=np.eye(dim), beta=1.0)

    @property
    def dim(self) -> int:
        return self.S.shape[0]

    def contains(self, w, tol=1e-9) -> bool:
        w = np.asarray(w, dtype=float)
        return bool(w @ self.S @ w <= self.beta * (1 + tol))

    def boundary_point(self, direction) -> np.ndarray:
        d = np.asarray(direction, dtype=float)
        q = float(d @ self.S @ d)
        if q <= 0:
            raise ModelError("direction must be nonzero")
        return d * np.sqrt(self.beta / q)


@dataclass(frozen=True)
class ProblemInstance:
    """Immutable min-max problem data; see module docstring for the stage cost."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    Q0: np.ndarray
    R0: np.ndarray
    gamma0: float
    alpha: float
    U: InputConstraint
    W: DisturbanceEllipsoid

    def __post_init__(self):
        A = _finite_array(self.A, "A")
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        n = A.shape[0]
        B = np.atleast_2d(_finite_array(self.B, "B"))
        if B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {B.shape}")
        G = np.atleast_2d(_finite_array(self.G, "G"))
        if G.shape[0] != n:
            raise DimensionError(f"G must have {n} rows, got {G.shape}")
        Q0 = _finite_array(self.Q0, "Q0", (n, n))
        R0 = _finite_array(self.R0, "R0", (B.shape[1], B.shape[1]))
        if self.U.dim != B.shape[1]:
            raise DimensionError(
                f"input constraint dimension {self.U.dim} != input count {B.shape[1]}"
            )
        if self.W.dim != G.shape[1]:
            raise DimensionError(
                f"disturbance set dimension {self.W.dim} != disturbance count {G.shape[1]}"
            )
        for name, val in (("A", A), ("B", B), ("G", G), ("Q0", Q0), ("R0", R0)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "gamma0", float(self.gamma0))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def l(self) -> int:
        return self.G.shape[1]

    def stage_cost(self, x, u, w) -> float:
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        w = np.asarray(w, float)
        return float(x @ self.Q0 @ x + u @ self.R0 @ u - self.gamma0**2 * (w @ w))


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    findings: list = field(default_factory=list)  # (check name, ok, measured)

    def failed_checks(self):
        return [f for f in self.findings if not f[1]]


def _rank_from_singular_values(M, rtol):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def validate(p: ProblemInstance, tol=None) -> ValidationReport:
    """Check symmetry, definiteness, controllability, observability and ranges.

    Dimension mismatches are structural errors raised at construction time and
    never show up here as findings.
    """
    cfg = DEFAULT_TOLERANCES
    tol = cfg.rank_rtol if tol is None else tol
    findings = []

    def check(name, ok, measured):
        findings.append((name, bool(ok), float(measured)))

    n = p.n
    q_asym = np.linalg.norm(p.Q0 - p.Q0.T)
    r_asym = np.linalg.norm(p.R0 - p.R0.T)
    check("Q0 symmetric", q_asym <= cfg.sym_rtol * max(1.0, np.linalg.norm(p.Q0)), q_asym)
    check("R0 symmetric", r_asym <= cfg.sym_rtol * max(1.0, np.linalg.norm(p.R0)), r_asym)

    q_eigs = np.linalg.eigvalsh(0.5 * (p.Q0 + p.Q0.T))
    r_eigs = np.linalg.eigvalsh(0.5 * (p.R0 + p.R0.T))
    q_scale = max(abs(q_eigs[0]), abs(q_eigs[-1]), 1e-300)
    r_scale = max(abs(r_eigs[0]), abs(r_eigs[-1]), 1e-300)
    check("Q0 positive semidefinite", q_eigs[0] >= -tol * q_scale, q_eigs[0])
    # strict definiteness of Q0 is required before Riccati/SDP use
    check("Q0 positive definite", q_eigs[0] > tol * q_scale, q_eigs[0])
    # R0 > 0 encodes "the input-cost factor has full column rank"
    check("R0 positive definite (full-rank input weight)", r_eigs[0] > tol * r_scale, r_eigs[0])

    ctrb = np.hstack([np.linalg.matrix_power(p.A, k) @ p.B for k in range(n)])
    rank_c = _rank_from_singular_values(ctrb, tol)
    check("(A,B) controllable", rank_c == n, rank_c)

    C = sym_sqrt(p.Q0, floor=0.0)
    obsv = np.vstack([C @ np.linalg.matrix_power(p.A, k) for k in range(n)])
    rank_o = _rank_from_singular_values(obsv, tol)
    check("(A,Q0^1/2) observable", rank_o == n, rank_o)

    check("alpha in (0,1)", 0.0 < p.alpha < 1.0, p.alpha)
    check("gamma0 > 0", p.gamma0 > 0, p.gamma0)

    w_eigs = np.linalg.eigvalsh(p.W.S)
    check("W shape matrix positive definite", w_eigs[0] > 0, w_eigs[0])

    return ValidationReport(passed=all(ok for _, ok, _ in findings), findings=findings)


def discount_transform(A, B, gamma, alpha):
    """(A, B, gamma) -> (sqrt(alpha) A, sqrt(alpha) B, gamma / sqrt(alpha)).

    Reduces the discounted problem to an undiscounted one on scaled data.
    """
    if not (0.0 < alpha <= 1.0):
        raise ModelError(f"invalid discount factor {alpha}: must be in (0, 1]")
    if not (gamma > 0):
        raise ModelError(f"invalid disturbance weight {gamma}: must be positive")
    root = np.sqrt(alpha)
    return root * np.asarray(A, float), root * np.asarray(B, float), float(gamma) / root


def random_instance(
    n: int,
    m: int,
    l: int,
    p: int,
    seed: int,
    alpha: float = 0.95,
    gamma0: float = 1.0,
    u_max: float = 1.0,
) -> ProblemInstance:
    """Draw A, B, G and cost factors i.i.d. standard normal from the seed.

    Q0 = C'C and R0 = D'D with C (p x n) and D (p x m) standard normal, so
    p >= m guarantees R0 > 0 almost surely.  The draw order is fixed
    (A, B, G, C, D); identical seeds yield identical instances.
    """
    if min(n, m, l, p) < 1:
        raise ModelError("dimensions must be positive")
    if p < m:
        raise ModelError("need p >= m so the input weight R0 = D'D can be positive definite")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    G = rng.standard_normal((n, l))
    C = rng.standard_normal((p, n))
    D = rng.standard_normal((p, m))
    return ProblemInstance(
        A=A,
        B=B,
        G=G,
        Q0=C.T @ C,
        R0=D.T @ D,
        gamma0=gamma0,
        alpha=alpha,
        U=BoxInput(u_max=np.full(m, float(u_max))),
        W=DisturbanceEllipsoid.unit_ball(l),
    )


def with_gamma(p: ProblemInstance, gamma0: float) -> ProblemInstance:
    """Copy of p with a new disturbance weight."""
    return dataclasses.replace(p, gamma0=float(gamma0))


def _constraint_to_doc(U: InputConstraint) -> dict:
    if isinstance(U, BoxInput):
        return {"type": "box", "u_max": U.u_max.tolist()}
    if isinstance(U, FiniteInput):
        return {"type": "finite", "points": U.points.tolist()}
    if isinstance(U, QuadraticInput):
        return {"type": "quadratic", "R": [Ri.tolist() for Ri in U.R], "s": list(U.s)}
    raise ModelError(f"unknown input constraint type {type(U)!r}")


def _constraint_from_doc(doc) -> InputConstraint:
    if not isinstance(doc, dict) or "type" not in doc:
        raise ModelError("input constraint document must be a tagged object")
    kind = doc["type"]
    try:
        if kind == "box":
            return BoxInput(u_max=np.asarray(doc["u_max"], float))
        if kind == "finite":
            return FiniteInput(points=np.asarray(doc["points"], float))
        if kind == "quadratic":
            return QuadraticInput(R=[np.asarray(Ri, float) for Ri in doc["R"]], s=doc["s"])
    except KeyError as exc:
        raise ModelError(f"input constraint document missing field {exc}") from exc
    raise ModelError(f"unknown input constraint tag {kind!r}")


def save(p: ProblemInstance, path) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "A": p.A.tolist(),
        "B": p.B.tolist(),
        "G": p.G.tolist(),
        "Q0": p.Q0.tolist(),
        "R0": p.R0.tolist(),
        "gamma0": p.gamma0,
        "alpha": p.alpha,
        "U": _constraint_to_doc(p.U),
        "W": {"S": p.W.S.tolist(), "beta": p.W.beta},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def load(path) -> ProblemInstance:
    try:
        with open(path) as fh:
            doc = json.load(
                fh, parse_constant=lambda s: (_ for _ in ()).throw(ModelError(f"non-finite constant {s!r}"))
            )
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed problem document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelError("problem document must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelError(f"unsupported schema_version {version!r}")
    missing = [k for k in ("A", "B", "G", "Q0", "R0", "gamma0", "alpha", "U", "W") if k not in doc]
    if missing:
        raise ModelError(f"problem document missing fields: {missing}")
    wdoc = doc["W"]
    if not isinstance(wdoc, dict) or "S" not in wdoc or "beta" not in wdoc:
        raise ModelError("W must be an object with fields S and beta")
    try:
        return ProblemInstance(
            A=np.asarray(doc["A"], float),
            B=np.asarray(doc["B"], float),
            G=np.asarray(doc["G"], float),
            Q0=np.asarray(doc["Q0"], float),
            R0=np.asarray(doc["R0"], float),
            gamma0=doc["gamma0"],
            alpha=doc["alpha"],
            U=_constraint_from_doc(doc["U"]),
            W=DisturbanceEllipsoid(S=np.asarray(wdoc["S"], float), beta=wdoc["beta"]),
        )
    except ModelError:
        raise
    except (TypeError, ValueError) as exc:
        raise ModelError(f"malformed problem document: {exc}") from exc
