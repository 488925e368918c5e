"""Unconstrained discounted min-max (H-infinity type) solver.

The value matrix P of the unconstrained game

    V(x) = min_u max_w  sum_t alpha^t (x'Qx + u'Ru - gamma^2 w'w)

is the fixed point of the coupled recursion

    Pbar = P + P G (gamma^2 I - G'PG)^{-1} G'P
    P    = Q + A'Pbar A - A'Pbar B (R + B'Pbar B)^{-1} B'Pbar A

run here as plain value iteration from P = Q.  Discounting is handled by
scaling the data (A, B, gamma) -> (sqrt(a) A, sqrt(a) B, gamma / sqrt(a)) and
solving the undiscounted problem; an equivalent direct discounted recursion is
provided as a cross-check route.  Loss of definiteness of gamma^2 I - G'PG at
any iterate is the infeasibility oracle for "gamma below the optimal gain".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .model import ProblemInstance, discount_transform, validate
from .numerics import sym_sqrt, symmetrize

__all__ = [
    "RiccatiError",
    "GammaTooSmall",
    "NoConvergence",
    "NoUpperBracket",
    "RiccatiSolution",
    "ClosedLoop",
    "isaacs_iterate",
    "isaacs_iterate_discounted",
    "solve_discounted",
    "hinf_optimal_gamma",
    "closed_loop",
    "bounded_real_check",
]


class RiccatiError(RuntimeError):
    pass


class GammaTooSmall(RiccatiError):
    """gamma^2 I - G'PG lost definiteness during value iteration."""

    def __init__(self, iteration: int, min_eig: float):
        self.iteration = iteration
        self.min_eig = min_eig
        super().__init__(
            f"disturbance weight too small: gamma^2 I - G'PG has min eigenvalue "
            f"{min_eig:.3e} at iterate {iteration}"
        )


class NoConvergence(RiccatiError):
    def __init__(self, iteration: int, residual: float):
        self.iteration = iteration
        self.residual = residual
        super().__init__(
            f"value iteration did not converge in {iteration} iterations "
            f"(last relative step {residual:.3e})"
        )


class NoUpperBracket(RiccatiError):
    """No feasible gamma found below the bisection cap."""


@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    Pbar: np.ndarray
    K: np.ndarray
    Kw: np.ndarray
    gamma: float
    alpha: float
    iterations: int
    residual: float
    # weights the solution was computed for (kept for downstream cross-checks)
    Q: np.ndarray = None
    R: np.ndarray = None


@dataclass(frozen=True)
class ClosedLoop:
    A_cl: np.ndarray


def _value_iteration(A, B, G, Q, R, gamma, rtol, max_iter):
    """Shared core: iterate the coupled recursion from P = Q."""
    l = G.shape[1]
    Il = np.eye(l)
    P = Q.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        Mw = gamma**2 * Il - G.T @ P @ G
        w_min = np.linalg.eigvalsh(0.5 * (Mw + Mw.T))[0]
        if w_min <= 0.0:
            raise GammaTooSmall(it, float(w_min))
        Pbar = P + P @ G @ np.linalg.solve(Mw, G.T @ P)
        Pbar = 0.5 * (Pbar + Pbar.T)
        Ru = R + B.T @ Pbar @ B
        PbA = Pbar @ A
        P_next = Q + A.T @ PbA - (B.T @ PbA).T @ np.linalg.solve(Ru, B.T @ PbA)
        P_next = 0.5 * (P_next + P_next.T)
        residual = np.linalg.norm(P_next - P, "fro") / max(np.linalg.norm(P_next, "fro"), 1e-300)
        P = P_next
        if residual <= rtol:
            Mw = gamma**2 * Il - G.T @ P @ G
            w_min = np.linalg.eigvalsh(0.5 * (Mw + Mw.T))[0]
            if w_min <= 0.0:
                raise GammaTooSmall(it, float(w_min))
            Pbar = P + P @ G @ np.linalg.solve(Mw, G.T @ P)
            return P, 0.5 * (Pbar + Pbar.T), it, float(residual)
    raise NoConvergence(max_iter, float(residual))


def _require_pd(M, name):
    w = np.linalg.eigvalsh(symmetrize(M))
    if w[0] <= 0:
        raise ValueError(f"{name} must be positive definite (min eigenvalue {w[0]:.3e})")


def isaacs_iterate(A, B, G, Q, R, gamma, tol=None, max_iter=None, cfg: Tolerances = None) -> RiccatiSolution:
    """Solve the undiscounted game by value iteration; gains from the fixed point."""
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    rtol = cfg.riccati_rtol if tol is None else tol
    max_iter = cfg.riccati_max_iter if max_iter is None else max_iter
    A = np.asarray(A, float)
    B = np.atleast_2d(np.asarray(B, float))
    G = np.atleast_2d(np.asarray(G, float))
    Q = symmetrize(Q)
    R = symmetrize(R)
    _require_pd(Q, "Q")
    _require_pd(R, "R")
    if not gamma > 0:
        raise ValueError("gamma must be positive")

    P, Pbar, iters, residual = _value_iteration(A, B, G, Q, R, gamma, rtol, max_iter)
    K = -np.linalg.solve(R + B.T @ Pbar @ B, B.T @ Pbar @ A)
    Mw = gamma**2 * np.eye(G.shape[1]) - G.T @ P @ G
    Kw = np.linalg.solve(Mw, G.T @ P @ (A + B @ K))
    return RiccatiSolution(
        P=P, Pbar=Pbar, K=K, Kw=Kw, gamma=float(gamma), alpha=1.0,
        iterations=iters, residual=residual, Q=Q, R=R,
    )


def isaacs_iterate_discounted(A, B, G, Q, R, gamma, alpha, tol=None, max_iter=None,
                              cfg: Tolerances = None) -> RiccatiSolution:
    """Direct discounted recursion (alpha inside the update), as a second route.

    Uses Pbar = aP + aPG(gamma^2 I - G'(aP)G)^{-1} G'(aP); the fixed point and
    gains coincide with the transform-then-undiscounted route.
    """
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    rtol = cfg.riccati_rtol if tol is None else tol
    max_iter = cfg.riccati_max_iter if max_iter is None else max_iter
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must be in (0, 1]")
    A = np.asarray(A, float)
    B = np.atleast_2d(np.asarray(B, float))
    G = np.atleast_2d(np.asarray(G, float))
    Q = symmetrize(Q)
    R = symmetrize(R)
    _require_pd(Q, "Q")
    _require_pd(R, "R")
    l = G.shape[1]
    Il = np.eye(l)
    P = Q.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        aP = alpha * P
        Mw = gamma**2 * Il - G.T @ aP @ G
        w_min = np.linalg.eigvalsh(0.5 * (Mw + Mw.T))[0]
        if w_min <= 0.0:
            raise GammaTooSmall(it, float(w_min))
        Pbar = aP + aP @ G @ np.linalg.solve(Mw, G.T @ aP)
        Pbar = 0.5 * (Pbar + Pbar.T)
        Ru = R + B.T @ Pbar @ B
        PbA = Pbar @ A
        P_next = Q + A.T @ PbA - (B.T @ PbA).T @ np.linalg.solve(Ru, B.T @ PbA)
        P_next = 0.5 * (P_next + P_next.T)
        residual = np.linalg.norm(P_next - P, "fro") / max(np.linalg.norm(P_next, "fro"), 1e-300)
        P = P_next
        if residual <= rtol:
            return _discounted_solution(A, B, G, Q, R, P, gamma, alpha, it, float(residual))
    raise NoConvergence(max_iter, float(residual))


def _discounted_solution(A, B, G, Q, R, P, gamma, alpha, iters, residual) -> RiccatiSolution:
    """Assemble gains for the discounted problem in original (unscaled) data."""
    l = G.shape[1]
    aP = alpha * P
    Mw = gamma**2 * np.eye(l) - G.T @ aP @ G
    w_min = np.linalg.eigvalsh(0.5 * (Mw + Mw.T))[0]
    if w_min <= 0.0:
        raise GammaTooSmall(iters, float(w_min))
    Pbar = aP + aP @ G @ np.linalg.solve(Mw, G.T @ aP)
    Pbar = 0.5 * (Pbar + Pbar.T)
    K = -np.linalg.solve(R + B.T @ Pbar @ B, B.T @ Pbar @ A)
    Kw = np.linalg.solve(Mw, G.T @ aP @ (A + B @ K))
    return RiccatiSolution(
        P=P, Pbar=Pbar, K=K, Kw=Kw, gamma=float(gamma), alpha=float(alpha),
        iterations=iters, residual=residual, Q=Q, R=R,
    )


def solve_discounted(p: ProblemInstance, Q, R, gamma, tol=None, max_iter=None,
                     cfg: Tolerances = None) -> RiccatiSolution:
    """Value matrix and gains of the discounted game with weights (Q, R, gamma).

    Solves the undiscounted problem on data scaled by the discount transform,
    then expresses the gains in the original data.
    """
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    rtol = cfg.riccati_rtol if tol is None else tol
    max_iter = cfg.riccati_max_iter if max_iter is None else max_iter
    Q = symmetrize(Q)
    R = symmetrize(R)
    _require_pd(Q, "Q")
    _require_pd(R, "R")
    At, Bt, gt = discount_transform(p.A, p.B, gamma, p.alpha)
    P, _, iters, residual = _value_iteration(At, Bt, p.G, Q, R, gt, rtol, max_iter)
    return _discounted_solution(p.A, p.B, p.G, Q, R, P, gamma, p.alpha, iters, residual)


def hinf_optimal_gamma(p: ProblemInstance, rel_tol=None, Q=None, R=None,
                       cfg: Tolerances = None) -> float:
    """Smallest feasible disturbance weight of the discounted game, by bisection.

    Feasibility of a probe means the value iteration converges with all
    well-posedness conditions intact; probes that exceed the (smaller)
    bisection iteration cap count as infeasible, which can only bias the
    result upward by less than the bisection resolution.
    """
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    rel_tol = cfg.bisect_rel_tol if rel_tol is None else rel_tol
    report = validate(p)
    if not report.passed:
        raise ValueError(f"instance fails validation: {report.failed_checks()}")
    Q = p.Q0 if Q is None else Q
    R = p.R0 if R is None else R

    def feasible(gamma):
        try:
            solve_discounted(p, Q, R, gamma, max_iter=cfg.bisect_riccati_max_iter, cfg=cfg)
            return True
        except RiccatiError:
            return False

    hi = 1.0 + np.linalg.norm(p.G, 2) * np.linalg.norm(Q, 2)
    guess = hi
    for _ in range(cfg.bisect_max_doublings):
        if feasible(hi):
            break
        hi *= 2.0
    else:
        raise NoUpperBracket(
            f"no feasible gamma found up to {hi:.3e} (cap 2^{cfg.bisect_max_doublings} x {guess:.3e})"
        )
    lo = hi / 2.0
    for _ in range(cfg.bisect_max_doublings):
        if not feasible(lo):
            break
        hi = lo
        lo /= 2.0
    else:
        # feasible all the way down: the optimal gain is numerically zero
        return hi
    while hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def closed_loop(p: ProblemInstance, sol: RiccatiSolution) -> ClosedLoop:
    """x+ = A_cl x under both optimal policies, in original data."""
    return ClosedLoop(A_cl=p.A + p.B @ sol.K + p.G @ sol.Kw)


def bounded_real_check(p: ProblemInstance, sol: RiccatiSolution, gamma, slack_tol) -> bool:
    """Closed-loop bounded-real test of a converged solution.

    Assembles, on discount-scaled data, the block matrix

        [ -P    0        Ac'    Cc' ]
        [  0   -gt^2 I   G'     0   ]
        [ Ac    G       -P^-1   0   ]
        [ Cc    0        0     -I   ]

    with Ac = At + Bt K, Cc = [Q^1/2; R^1/2 K] and P = sol.P, and reports
    whether its maximum eigenvalue is <= slack_tol.  At a converged solution
    the matrix touches zero from below: the Riccati fixed point under the
    closed-loop substitution is exactly the equality case of the bounded-real
    inequality.  Only Q = C'C and R = D'D enter the congruence-checked
    quantity, so the factorization choice does not affect the test.
    """
    if sol.Q is None or sol.R is None:
        raise ValueError("solution does not carry its (Q, R) weights")
    At, Bt, gt = discount_transform(p.A, p.B, gamma, p.alpha)
    n, m = Bt.shape
    l = p.G.shape[1]
    P = sol.P
    K = sol.K
    Ac = At + Bt @ K
    Cc = np.vstack([sym_sqrt(sol.Q), sym_sqrt(sol.R) @ K])
    q = Cc.shape[0]
    Pinv = np.linalg.inv(P)
    blk = np.block([
        [-P, np.zeros((n, l)), Ac.T, Cc.T],
        [np.zeros((l, n)), -gt**2 * np.eye(l), p.G.T, np.zeros((l, q))],
        [Ac, p.G, -Pinv, np.zeros((n, q))],
        [Cc, np.zeros((q, l)), np.zeros((q, n)), -np.eye(q)],
    ])
    blk = 0.5 * (blk + blk.T)
    return bool(np.linalg.eigvalsh(blk)[-1] <= slack_tol)
