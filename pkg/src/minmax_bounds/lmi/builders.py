"""Builders for the semidefinite programs used by the bound pipeline.

``build_relaxation4`` is the trace program whose optimum equals the trace of
the game value matrix at fixed weights (Q, R, gamma): variables P and X, a
four-by-four block constraint assembled with null-space bases N, M of the
(discount-scaled) input map so that R^{-1} enters affinely, the disturbance
coupling gamma~^2 I - G'PG > 0, and the inverse coupling [X I; I P] >= 0.

Orientation and scaling of the blocks follow the convention that makes the
optimum coincide with the Riccati value matrix (cross-checked in the tests):

    [ N'(AXA'-X)N   N'AX        N'(AXA'-X)M                N'G   ]
    [ XA'N          X - Q^-1    XA'M                       0     ]
    [ M'(AXA'-X)N   M'AX        M'(AXA'-X - B R^-1 B')M    M'G   ]
    [ G'N           0           G'M                        -g~^2 ]  < 0

with all data discount-scaled and X playing the role of gamma~^2 P^{-1} after
normalization; at the optimum X = P^{-1} and the coupling is tight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import DEFAULT_TOLERANCES, Tolerances
from ..model import (
    BoxInput,
    FiniteInput,
    InputConstraint,
    ProblemInstance,
    QuadraticInput,
    discount_transform,
)
from ..numerics import null_bases, svec, svec_indices, sym_sqrt, symmetrize
from .program import ConicProgram

__all__ = [
    "build_relaxation4",
    "build_relaxation2",
    "build_verify",
    "encode_stage_domination",
    "StageDominationEncoding",
    "DualCertificate",
    "lambda33_packed_indices",
]


def _margin(scale, cfg: Tolerances) -> float:
    return cfg.lmi_margin_rtol * max(1.0, float(scale))


def build_relaxation4(p: ProblemInstance, Q, R_inv, gamma,
                      cfg: Tolerances = None) -> ConicProgram:
    """Trace-minimization program for the discounted game at weights (Q, R).

    ``R_inv`` enters as the named parameter "R_inv" so the program can be
    dualized and the parameter later promoted to a decision variable.  The
    discount transform is applied internally from ``p.alpha``; ``gamma`` is
    the original-scale disturbance weight.
    """
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    Q = symmetrize(Q)
    R_inv = symmetrize(R_inv)
    At, Bt, gt = discount_transform(p.A, p.B, gamma, p.alpha)
    n, m = Bt.shape
    l = p.G.shape[1]
    G = p.G
    try:
        Qinv = np.linalg.inv(Q)
    except np.linalg.LinAlgError as exc:
        raise ValueError("state weight Q is not invertible") from exc
    nb = null_bases(Bt, cfg.rank_rtol)
    N, M = nb.N, nb.M
    r = M.shape[1]
    kdim = (n - r) + n + r + l

    prog = ConicProgram(sense="min", name="trace_relaxation")
    prog.add_symmetric("P", n)
    prog.add_symmetric("X", n)
    prog.add_param("R_inv", "symmetric", (m, m), R_inv)
    prog.add_objective_term("P", svec(np.eye(n)))

    # diagonal congruence balances the block (identical feasible set): the
    # disturbance row carries gamma~^2 and the state-cost row ||Q^-1||
    d_q = 1.0 / np.sqrt(max(1.0, np.linalg.norm(Qinv, 2)))
    d_w = 1.0 / gt
    D = np.concatenate([np.ones(n - r), np.full(n, d_q), np.ones(r), np.full(l, d_w)])

    def big_block(v):
        X = v["X"]
        Ri = v["R_inv"]
        AXA_X = At @ X @ At.T - X
        raw = np.block([
            [N.T @ AXA_X @ N, N.T @ At @ X, N.T @ AXA_X @ M, N.T @ G],
            [X @ At.T @ N, X - Qinv, X @ At.T @ M, np.zeros((n, l))],
            [M.T @ AXA_X @ N, M.T @ At @ X, M.T @ AXA_X @ M - M.T @ Bt @ Ri @ Bt.T @ M, M.T @ G],
            [G.T @ N, np.zeros((l, n)), G.T @ M, -gt**2 * np.eye(l)],
        ])
        return raw * np.outer(D, D)

    eps_blk = _margin(np.linalg.norm(G, 2), cfg)
    prog.add_psd_constraint(
        "hinf_block", kdim,
        lambda v: -big_block(v) - eps_blk * np.eye(kdim),
        blocks=("X", "R_inv"),
    )

    eps_g = _margin(1.0, cfg)
    prog.add_psd_constraint(
        "gamma_coupling", l,
        lambda v: np.eye(l) - G.T @ v["P"] @ G / gt**2 - eps_g * np.eye(l),
        blocks=("P",),
    )
    prog.add_psd_constraint(
        "inverse_coupling", 2 * n,
        lambda v: np.block([[v["X"], np.eye(n)], [np.eye(n), v["P"]]]),
        blocks=("P", "X"),
    )
    eps_pd = _margin(np.linalg.norm(Q, 2), cfg)
    prog.add_psd_constraint("P_pd", n, lambda v: v["P"] - eps_pd * np.eye(n), blocks=("P",))
    prog.add_psd_constraint("X_pd", n, lambda v: v["X"] - eps_pd * np.eye(n), blocks=("X",))
    return prog


def lambda33_packed_indices(p: ProblemInstance, cfg: Tolerances = None):
    """svec indices of the (M-row, M-row) diagonal sub-block of the dual of
    "hinf_block" -- the block that multiplies R^{-1} in the dual objective."""
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    At, Bt, _ = discount_transform(p.A, p.B, p.gamma0, p.alpha)
    n, m = Bt.shape
    l = p.G.shape[1]
    nb = null_bases(Bt, cfg.rank_rtol)
    r = nb.M.shape[1]
    kdim = (n - r) + n + r + l
    start = (n - r) + n
    rows, cols = svec_indices(kdim)
    inside = (rows >= start) & (rows < start + r) & (cols >= start) & (cols < start + r)
    return np.where(inside)[0], (start, start + r)


def build_relaxation2(p: ProblemInstance, Q, R, gamma, cfg: Tolerances = None) -> ConicProgram:
    """Convexified closed-loop bounded-real program in (Y, L) = (P^-1, K P^-1).

    Used only as a cross-check of the trace program: R is fixed here, so it
    cannot serve the bound optimizer (the gain variable multiplies the input
    cost factor).  Minimizing Tr(P) over the coupling [Y I; I P] >= 0 recovers
    the value matrix, and K = L Y^{-1} recovers the optimal gain.
    """
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    Q = symmetrize(Q)
    R = symmetrize(R)
    At, Bt, gt = discount_transform(p.A, p.B, gamma, p.alpha)
    n, m = Bt.shape
    l = p.G.shape[1]
    G = p.G
    Cs = np.vstack([sym_sqrt(Q), np.zeros((m, n))])   # output map:  z = Cs x + Ds u
    Ds = np.vstack([np.zeros((n, m)), sym_sqrt(R)])
    q = n + m

    prog = ConicProgram(sense="min", name="bounded_real_relaxation")
    prog.add_symmetric("Y", n)
    prog.add_matrix("L", m, n)
    prog.add_symmetric("P", n)
    prog.add_objective_term("P", svec(np.eye(n)))

    kdim = n + l + n + q

    d_w = 1.0 / gt
    D = np.concatenate([np.ones(n), np.full(l, d_w), np.ones(n), np.ones(q)])

    def br_block(v):
        Y, L = v["Y"], v["L"]
        AY = At @ Y + Bt @ L
        CY = Cs @ Y + Ds @ L
        raw = np.block([
            [-Y, np.zeros((n, l)), AY.T, CY.T],
            [np.zeros((l, n)), -gt**2 * np.eye(l), G.T, np.zeros((l, q))],
            [AY, G, -Y, np.zeros((n, q))],
            [CY, np.zeros((q, l)), np.zeros((q, n)), -np.eye(q)],
        ])
        return raw * np.outer(D, D)

    eps_blk = _margin(np.linalg.norm(G, 2) * d_w, cfg)
    prog.add_psd_constraint(
        "bounded_real", kdim,
        lambda v: -br_block(v) - eps_blk * np.eye(kdim),
        blocks=("Y", "L"),
    )
    prog.add_psd_constraint(
        "inverse_coupling", 2 * n,
        lambda v: np.block([[v["Y"], np.eye(n)], [np.eye(n), v["P"]]]),
        blocks=("Y", "P"),
    )
    eps_pd = _margin(1.0, cfg)
    prog.add_psd_constraint("Y_pd", n, lambda v: v["Y"] - eps_pd * np.eye(n), blocks=("Y",))
    return prog


@dataclass(frozen=True)
class StageDominationEncoding:
    """Constraint bundle enforcing stage-cost domination in (R^{-1}, s, lambda).

    With Q fixed to the stage cost's state weight and gamma >= gamma0, the
    pointwise requirement reduces to  u'Ru + s <= u'R0u on U.  For finite U
    this is one Schur-complement LMI per point:

        [ u_i'R0u_i - s   u_i'  ]
        [ u_i             R^-1  ]  >= 0.

    For box/quadratic U it is the S-procedure sufficient condition: lambda_i
    >= 0, R <= R0 + sum_i lambda_i R_i (as the coupled Schur block with
    identity off-diagonals), and s <= sum_i lambda_i s_i.

    The emitted blocks use the *stage* constant s; the certified bound later
    adds s/(1-alpha).  (The s/(1-alpha) variant sometimes seen in print would
    certify more than the stage inequality justifies; see the ledger.)
    """

    kind: str                 # "finite" or "quadratic"
    R_list: tuple             # quadratic case: the R_i
    s_list: tuple             # quadratic case: the s_i
    points: np.ndarray        # finite case: the input points
    R0: np.ndarray
    alpha: float
    n_multipliers: int

    def apply(self, prog: ConicProgram, rinv_name="R_inv", s_name="s", lam_prefix="lam"):
        """Add the blocks to ``prog``; returns the multiplier variable names."""
        m = self.R0.shape[0]
        prog.add_scalar(s_name)
        lam_names = []
        if self.kind == "finite":
            for i, u in enumerate(self.points):
                u = np.asarray(u, float)
                r0u = float(u @ self.R0 @ u)

                def point_block(v, u=u, r0u=r0u):
                    top = np.concatenate([[r0u - v[s_name]], u])
                    bottom = np.hstack([u[:, None], v[rinv_name]])
                    return np.vstack([top[None, :], bottom])

                prog.add_psd_constraint(
                    f"domination_point_{i}", 1 + m, point_block,
                    blocks=(s_name, rinv_name),
                )
        else:
            for i in range(self.n_multipliers):
                nm = f"{lam_prefix}_{i}"
                prog.add_scalar(nm)
                lam_names.append(nm)
                prog.add_psd_constraint(
                    f"{nm}_nonneg", 1, lambda v, nm=nm: np.array([[v[nm]]]), blocks=(nm,)
                )

            def sproc_block(v):
                cap = self.R0 + sum(v[nm] * Ri for nm, Ri in zip(lam_names, self.R_list))
                return np.block([[cap, np.eye(m)], [np.eye(m), v[rinv_name]]])

            prog.add_psd_constraint(
                "domination_sproc", 2 * m, sproc_block,
                blocks=tuple(lam_names) + (rinv_name,),
            )

            def offset_block(v):
                tot = sum(v[nm] * si for nm, si in zip(lam_names, self.s_list))
                return np.array([[tot - v[s_name]]])

            prog.add_psd_constraint(
                "domination_offset", 1, offset_block,
                blocks=tuple(lam_names) + (s_name,),
            )
        return lam_names

    def best_offset(self, R, backend=None, cfg: Tolerances = None):
        """Largest stage constant s compatible with the weight R.

        Finite U: closed form min_i u_i'(R0 - R)u_i.  Quadratic/box U: a small
        maximization over the multipliers; returns (s, lambda, feasible).
        """
        from .solve import SolveStatus, solve  # local import to avoid a cycle

        cfg = DEFAULT_TOLERANCES if cfg is None else cfg
        R = symmetrize(R)
        if self.kind == "finite":
            vals = [float(u @ (self.R0 - R) @ u) for u in self.points]
            return min(vals), None, True
        prog = ConicProgram(sense="max", name="offset_maximization")
        lam_names = []
        for i in range(self.n_multipliers):
            nm = f"lam_{i}"
            prog.add_scalar(nm)
            lam_names.append(nm)
            prog.add_psd_constraint(
                f"{nm}_nonneg", 1, lambda v, nm=nm: np.array([[v[nm]]]), blocks=(nm,)
            )
            prog.add_objective_term(nm, np.array([self.s_list[i]]))
        m = self.R0.shape[0]

        def cap_block(v):
            cap = self.R0 + sum(v[nm] * Ri for nm, Ri in zip(lam_names, self.R_list)) - R
            return cap

        prog.add_psd_constraint("weight_cap", m, cap_block, blocks=tuple(lam_names))
        res = solve(prog, backend=backend, cfg=cfg)
        if res.status is SolveStatus.OPTIMAL:
            lam_raw = np.array([max(res.variables[nm], 0.0) for nm in lam_names])
            # snap solver noise to exact zeros when the cap stays satisfied,
            # and recompute the offset from the explicit multipliers so the
            # certified pair is feasible by construction
            lam_snap = np.where(lam_raw <= 1e-9 * max(1.0, lam_raw.max(initial=0.0)),
                                0.0, lam_raw)
            for lam in (lam_snap, lam_raw):
                cap = self.R0 + sum(li * Ri for li, Ri in zip(lam, self.R_list)) - R
                if np.linalg.eigvalsh(0.5 * (cap + cap.T))[0] >= -1e-8:
                    return float(np.dot(lam, self.s_list)), lam, True
            return float(np.dot(lam_raw, self.s_list)), lam_raw, True
        return -np.inf, None, False


def encode_stage_domination(U: InputConstraint, R0, alpha) -> StageDominationEncoding:
    """Build the domination encoding for an input constraint set."""
    R0 = symmetrize(R0)
    if isinstance(U, FiniteInput):
        if U.points.shape[0] < 1:
            raise ValueError("finite input set is empty")
        return StageDominationEncoding(
            kind="finite", R_list=(), s_list=(), points=U.points,
            R0=R0, alpha=float(alpha), n_multipliers=0,
        )
    quad = U.as_quadratic() if isinstance(U, BoxInput) else U
    if not isinstance(quad, QuadraticInput):
        raise ValueError(f"unsupported input constraint {type(U)!r}")
    return StageDominationEncoding(
        kind="quadratic", R_list=tuple(quad.R), s_list=tuple(quad.s),
        points=np.zeros((0, R0.shape[0])), R0=R0, alpha=float(alpha),
        n_multipliers=len(quad.R),
    )


def build_verify(A_cl, Kw, S, beta, x0, cfg: Tolerances = None) -> ConicProgram:
    """Feasibility program certifying that the unconstrained adversary stays
    inside the disturbance ellipsoid from every state in a sublevel set of x0.

    Variables H >= 0 and t > 0 (t plays 1/lambda):

        t Kw'S Kw <= H,    x0'Hx0 <= beta t,    A_cl'H A_cl - H <= 0,

    with the homogeneous scaling fixed by Tr(H) = 1.
    """
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    A_cl = np.asarray(A_cl, float)
    Kw = np.atleast_2d(np.asarray(Kw, float))
    S = symmetrize(S)
    x0 = np.asarray(x0, float).ravel()
    n = A_cl.shape[0]
    KSK = Kw.T @ S @ Kw

    prog = ConicProgram(sense="min", name="region_verification")
    prog.add_symmetric("H", n)
    prog.add_scalar("t")

    prog.add_psd_constraint(
        "w_gain_bound", n, lambda v: v["H"] - v["t"] * KSK, blocks=("H", "t")
    )
    prog.add_psd_constraint(
        "level_at_x0", 1,
        lambda v: np.array([[beta * v["t"] - x0 @ v["H"] @ x0]]),
        blocks=("H", "t"),
    )
    prog.add_psd_constraint(
        "dissipation", n, lambda v: v["H"] - A_cl.T @ v["H"] @ A_cl, blocks=("H",)
    )
    prog.add_psd_constraint("H_psd", n, lambda v: v["H"], blocks=("H",))
    t_min = 1e-9
    prog.add_psd_constraint(
        "t_positive", 1, lambda v: np.array([[v["t"] - t_min]]), blocks=("t",)
    )
    prog.add_eq_constraint(
        "normalization", lambda v: np.array([np.trace(v["H"]) - 1.0]), blocks=("H",)
    )
    return prog


@dataclass(frozen=True)
class DualCertificate:
    """Dual blocks of the trace program plus the domination variables."""

    Z: np.ndarray        # dual of the gamma coupling (l x l)
    Phi: np.ndarray      # dual of [X I; I P] (2n x 2n)
    Lambda: np.ndarray   # dual of the 4x4 block constraint
    s: float
    multipliers: np.ndarray
    lambda_partition: tuple  # row offsets of the (N, q, M, w) blocks

    @property
    def Phi11(self):
        n = self.Phi.shape[0] // 2
        return self.Phi[:n, :n]

    @property
    def Phi12(self):
        n = self.Phi.shape[0] // 2
        return self.Phi[:n, n:]

    @property
    def Phi22(self):
        n = self.Phi.shape[0] // 2
        return self.Phi[n:, n:]

    def lambda_block(self, i, j):
        off = self.lambda_partition
        return self.Lambda[off[i]:off[i + 1], off[j]:off[j + 1]]
