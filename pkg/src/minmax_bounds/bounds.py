"""Certified lower bounds on the constrained min-max value function.

A certificate is a tuple (Q, R, gamma, s, P): if the stage cost of the
unconstrained game with weights (Q, R, gamma) plus the constant s sits below
the true stage cost on U x W, then

    x0' P x0 + s / (1 - alpha)  <=  V(x0)

for every initial state x0 whose unconstrained adversary trajectory stays in
the disturbance set (the verified region).  Q is fixed to the stage cost's
state weight and gamma to (at least) the stage cost's disturbance weight, so
the domination reduces to input-side constraints in (R^{-1}, s, lambda).

The bound is optimized by the alternating procedure on the bilinear dual of
the trace program: freeze R^{-1} and maximize over the dual blocks and
(s, lambda); then pin the dual sub-block that multiplies R^{-1} and maximize
over (R^{-1}, s, lambda, remaining duals).  Each round is re-certified by a
primal solve and accepted only if the certified value does not decrease.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .hinf import RiccatiError, RiccatiSolution, closed_loop, solve_discounted
from .lmi.builders import (
    build_relaxation4,
    build_verify,
    encode_stage_domination,
    lambda33_packed_indices,
)
from .lmi.program import ConicProgram
from .lmi.solve import SolveStatus, solve
from .model import BoxInput, DisturbanceEllipsoid, ProblemInstance, validate
from .numerics import is_pd, svec, symmetrize

__all__ = [
    "BoundError",
    "DominationInfeasible",
    "PrefixViolation",
    "LmiInfeasible",
    "BoundCertificate",
    "RegionCertificate",
    "AlternationLog",
    "basic_bound",
    "certify",
    "optimize_bound",
    "evaluate_bound",
    "verify_initial_state",
    "ellipsoid_inner",
    "export_certificate",
]


class BoundError(RuntimeError):
    pass


class DominationInfeasible(BoundError):
    """The (R, s) pair does not satisfy the stage-domination hypothesis."""


class PrefixViolation(BoundError):
    def __init__(self, step: int, w, level: float):
        self.step = step
        self.w = w
        self.level = level
        super().__init__(
            f"unconstrained adversary exits the disturbance set at step {step} "
            f"(w'Sw = {level:.6g} > beta)"
        )


class LmiInfeasible(BoundError):
    """The region feasibility program failed; inconclusive, not a disproof."""


@dataclass(frozen=True)
class BoundCertificate:
    Q: np.ndarray
    R: np.ndarray
    gamma: float
    s: float
    P: np.ndarray
    trace_value: float        # optimal value of the trace program at R^{-1}
    alpha: float
    K: np.ndarray             # gains of the associated unconstrained problem
    Kw: np.ndarray
    provenance: str           # basic | optimized | external
    riccati: RiccatiSolution = None

    @property
    def offset(self) -> float:
        """Constant part of the bound, s / (1 - alpha)."""
        return self.s / (1.0 - self.alpha)

    @property
    def value(self) -> float:
        """Scalar trace summary used for optimization: J*(R^-1) + s/(1-alpha)."""
        return self.trace_value + self.offset


@dataclass(frozen=True)
class RegionCertificate:
    H: np.ndarray
    level: float
    prefix_T: int
    x_ref: np.ndarray


@dataclass
class AlternationLog:
    rounds: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def record(self, round_index, frozen_block, sdp_objective, certified, status):
        self.rounds.append({
            "round": int(round_index),
            "frozen_block": frozen_block,
            "sdp_objective": None if sdp_objective is None else float(sdp_objective),
            "certified_bound": None if certified is None else float(certified),
            "status": status,
        })

    def certified_series(self):
        return [r["certified_bound"] for r in self.rounds if r["certified_bound"] is not None]


def _trace_value(p: ProblemInstance, R, gamma, cfg, backend=None):
    """Solve the trace program at R and cross-check against the Riccati route."""
    R = symmetrize(R)
    Rinv = np.linalg.inv(R)
    sol = solve_discounted(p, p.Q0, R, gamma, cfg=cfg)
    prog = build_relaxation4(p, p.Q0, Rinv, gamma, cfg=cfg)
    res = solve(prog, backend=backend, cfg=cfg)
    tr_ric = float(np.trace(sol.P))
    if res.status is not SolveStatus.OPTIMAL:
        raise BoundError(
            f"trace program failed at the certified weight: {res.status.value} ({res.message})"
        )
    if abs(res.objective - tr_ric) > 1e-3 * max(1.0, abs(tr_ric)):
        raise BoundError(
            f"trace program value {res.objective:.6g} disagrees with the Riccati "
            f"route {tr_ric:.6g}"
        )
    return float(res.objective), sol


def certify(p: ProblemInstance, R, s, gamma, cfg: Tolerances = None,
            backend=None, provenance="external") -> BoundCertificate:
    """Independently certify a candidate weight/offset pair.

    Re-checks stage domination at (R, s), re-maximizes the offset at fixed R
    keeping the better value, then solves the trace program (with a Riccati
    cross-check) to obtain the value matrix and the trace summary.
    """
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    R = symmetrize(R)
    if not is_pd(R, 1e-12):
        raise ValueError("candidate input weight R must be positive definite")
    if gamma < p.gamma0 * (1 - 1e-12):
        raise ValueError("gamma must not be below the stage cost's disturbance weight")
    enc = encode_stage_domination(p.U, p.R0, p.alpha)
    s_best, _, feasible = enc.best_offset(R, backend=backend, cfg=cfg)
    if not feasible:
        raise DominationInfeasible(
            "no multipliers certify the candidate weight against the stage cost"
        )
    if s > s_best + 1e-7 * max(1.0, abs(s_best)):
        raise DominationInfeasible(
            f"offset s = {s:.6g} is not certified at this weight (best {s_best:.6g})"
        )
    # re-maximization can only help: the certified offset is the best feasible
    s_final = float(s_best)
    trace_val, sol = _trace_value(p, R, gamma, cfg, backend=backend)
    return BoundCertificate(
        Q=p.Q0, R=R, gamma=float(gamma), s=s_final, P=sol.P,
        trace_value=trace_val, alpha=p.alpha, K=sol.K, Kw=sol.Kw,
        provenance=provenance, riccati=sol,
    )


def basic_bound(p: ProblemInstance, gamma=None, cfg: Tolerances = None,
                backend=None) -> BoundCertificate:
    """Bound at the stage cost's own weights: Q = Q0, R = R0, s = 0."""
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    gamma = p.gamma0 if gamma is None else float(gamma)
    if gamma < p.gamma0 * (1 - 1e-12):
        raise ValueError("gamma must be >= the stage cost's disturbance weight")
    report = validate(p)
    if not report.passed:
        raise ValueError(f"instance fails validation: {report.failed_checks()}")
    cert = certify(p, p.R0, 0.0, gamma, cfg=cfg, backend=backend, provenance="basic")
    return cert


def _joint_dual_program(p: ProblemInstance, gamma, Rinv_value, cfg) -> tuple:
    """Dual of the trace program joined with the domination blocks.

    Returns (program, encoding); "R_inv" stays a parameter so the program can
    be solved at a frozen weight or promoted for the alternation step.
    """
    prog = build_relaxation4(p, p.Q0, Rinv_value, gamma, cfg=cfg)
    dual = prog.dualize(bilinear_param="R_inv")
    enc = encode_stage_domination(p.U, p.R0, p.alpha)
    enc.apply(dual, rinv_name="R_inv")
    dual.add_objective_term("s", np.array([1.0 / (1.0 - p.alpha)]))
    return dual, enc


def optimize_bound(p: ProblemInstance, gamma=None, rounds=None, inner_tol=None,
                   cfg: Tolerances = None, backend=None):
    """Alternating maximization of the certified bound; returns (cert, log).

    Each round: (a) freeze R^{-1}, solve the joint dual; (b) pin the dual
    sub-block multiplying R^{-1} at its step-(a) value and solve over
    (R^{-1}, s, lambda, remaining duals); re-certify the round's weight and
    accept only a non-decreasing certified value.  Solver trouble in a round
    degrades to returning the best certificate so far with a warning record.
    """
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    gamma = p.gamma0 if gamma is None else float(gamma)
    rounds = cfg.alternation_rounds if rounds is None else int(rounds)
    inner_tol = cfg.alternation_inner_tol if inner_tol is None else float(inner_tol)

    log = AlternationLog()
    best = basic_bound(p, gamma=gamma, cfg=cfg, backend=backend)
    best = dataclasses.replace(best, provenance="optimized")
    log.record(0, None, best.trace_value, best.value, "basic")

    lam_idx, _ = lambda33_packed_indices(p, cfg)
    R_cur = best.R
    for rnd in range(1, rounds + 1):
        Rinv_cur = np.linalg.inv(R_cur)
        dual, enc = _joint_dual_program(p, gamma, Rinv_cur, cfg)
        res_a = solve(dual, backend=backend, cfg=cfg)
        if res_a.status is not SolveStatus.OPTIMAL:
            log.warnings.append(
                f"round {rnd}: dual solve at frozen weight failed "
                f"({res_a.status.value}: {res_a.message}); stopping"
            )
            log.record(rnd, "R_inv", None, None, res_a.status.value)
            break
        log.record(rnd, "R_inv", res_a.objective, None, res_a.status.value)

        Lam = res_a.variables["dual_hinf_block"]
        lam_pin_values = svec(Lam)[lam_idx]
        prog_b = dual.promote_param(
            "R_inv", pins={"dual_hinf_block": (lam_idx, lam_pin_values)}
        )
        m = p.m
        eps_r = cfg.lmi_margin_rtol
        prog_b.add_psd_constraint(
            "Rinv_pd", m, lambda v: v["R_inv"] - eps_r * np.eye(m), blocks=("R_inv",)
        )
        res_b = solve(prog_b, backend=backend, cfg=cfg)
        if res_b.status is not SolveStatus.OPTIMAL:
            log.warnings.append(
                f"round {rnd}: the weight-update solve failed "
                f"({res_b.status.value}: {res_b.message}); stopping"
            )
            log.record(rnd, "Lambda33", None, None, res_b.status.value)
            break

        Rinv_new = symmetrize(res_b.variables["R_inv"])
        # the weight update may overshoot the feasible-weight region (the
        # unconstrained game value blows up at its boundary); backtrack along
        # the segment in R^{-1} space until certification succeeds
        cand = None
        fail_reason = None
        for theta in (1.0, 0.5, 0.25, 0.1, 0.03):
            Rinv_try = (1.0 - theta) * Rinv_cur + theta * Rinv_new
            try:
                R_try = symmetrize(np.linalg.inv(Rinv_try))
                attempt = certify(p, R_try, res_b.variables["s"], gamma, cfg=cfg,
                                  backend=backend, provenance="optimized")
            except (np.linalg.LinAlgError, RiccatiError, BoundError, ValueError) as exc:
                fail_reason = exc
                continue
            if attempt.value >= best.value - 1e-12 * max(1.0, abs(best.value)):
                cand = attempt
                break
            fail_reason = (
                f"certified value decreased ({attempt.value:.6g} < {best.value:.6g})"
            )
        if cand is None:
            log.warnings.append(f"round {rnd}: no acceptable weight update ({fail_reason})")
            log.record(rnd, "Lambda33", res_b.objective, best.value, "Rejected")
            break

        improved = cand.value - best.value
        if cand.value >= best.value:
            best = cand
        R_cur = cand.R
        log.record(rnd, "Lambda33", res_b.objective, best.value, res_b.status.value)
        if improved < inner_tol * max(1.0, abs(best.value)):
            break
    return best, log


def evaluate_bound(cert: BoundCertificate, x0) -> float:
    """x0' P x0 + s / (1 - alpha)."""
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != cert.P.shape[0]:
        raise ValueError(
            f"state has dimension {x0.size}, certificate expects {cert.P.shape[0]}"
        )
    return float(x0 @ cert.P @ x0) + cert.offset


def ellipsoid_inner(W) -> tuple:
    """Inner ellipsoid (S, beta) of a disturbance-set description.

    Ellipsoids pass through unchanged; an axis-aligned box [-d, d]^l maps to
    its inscribed ball.
    """
    if isinstance(W, DisturbanceEllipsoid):
        return W.S, W.beta
    if isinstance(W, BoxInput):
        d = np.min(W.u_max)
        return np.eye(W.dim), float(d**2)
    if isinstance(W, dict) and set(W) >= {"S", "beta"}:
        return np.asarray(W["S"], float), float(W["beta"])
    raise ValueError(f"unsupported disturbance-set description {type(W)!r}")


def verify_initial_state(p: ProblemInstance, cert: BoundCertificate, x0,
                         prefix_T=None, cfg: Tolerances = None,
                         backend=None) -> RegionCertificate:
    """Certify that the bound is valid at x0.

    Checks the first ``prefix_T`` steps of the unconstrained adversary
    trajectory pointwise, then solves the region feasibility program from the
    propagated state.  Raises PrefixViolation(k) when a checked step exits the
    disturbance set and LmiInfeasible when the feasibility program fails
    (inconclusive).
    """
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    prefix_T = cfg.verify_prefix_steps if prefix_T is None else int(prefix_T)
    x0 = np.asarray(x0, dtype=float).ravel()
    S, beta = ellipsoid_inner(p.W)
    A_cl = closed_loop(p, cert.riccati).A_cl if cert.riccati is not None else (
        p.A + p.B @ cert.K + p.G @ cert.Kw
    )
    x = x0.copy()
    for k in range(prefix_T):
        w = cert.Kw @ x
        level = float(w @ S @ w)
        if level > beta * (1.0 + 1e-9):
            raise PrefixViolation(k, w, level)
        x = A_cl @ x
    prog = build_verify(A_cl, cert.Kw, S, beta, x, cfg=cfg)
    res = solve(prog, backend=backend, cfg=cfg)
    if res.status is not SolveStatus.OPTIMAL:
        raise LmiInfeasible(
            f"region feasibility program: {res.status.value} ({res.message})"
        )
    H = symmetrize(res.variables["H"])
    return RegionCertificate(H=H, level=float(x @ H @ x), prefix_T=prefix_T, x_ref=x)


CERT_SCHEMA_VERSION = 1


def export_certificate(cert: BoundCertificate, path, region: RegionCertificate = None):
    doc = {
        "schema_version": CERT_SCHEMA_VERSION,
        "Q": cert.Q.tolist(),
        "R": cert.R.tolist(),
        "gamma": cert.gamma,
        "s": cert.s,
        "P": cert.P.tolist(),
        "alpha": cert.alpha,
        "trace_value": cert.trace_value,
        "offset": cert.offset,
        "value": cert.value,
        "K": cert.K.tolist(),
        "Kw": cert.Kw.tolist(),
        "provenance": cert.provenance,
    }
    if region is not None:
        doc["region"] = {
            "H": region.H.tolist(),
            "level": region.level,
            "prefix_T": region.prefix_T,
            "x_ref": region.x_ref.tolist(),
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")
