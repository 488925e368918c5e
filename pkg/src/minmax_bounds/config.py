"""Shared tolerance configuration.

All default numerical tolerances live in this one record so that library code
and tests agree on a single source of truth.  Functions take an optional
``tol`` / ``cfg`` argument and fall back to ``DEFAULT_TOLERANCES``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    # relative rank cutoff for controllability/observability tests:
    # singular values below rank_rtol * sigma_max count as zero
    rank_rtol: float = 1e-9
    # matrices further than sym_rtol * ||A|| from symmetric are rejected
    sym_rtol: float = 1e-8
    # PSD/PD decisions: min eigenvalue compared against psd_rtol * ||A||
    psd_rtol: float = 1e-9
    # Riccati value iteration: stop when ||P_next - P|| <= riccati_rtol * ||P_next||
    riccati_rtol: float = 1e-11
    riccati_max_iter: int = 100_000
    # gamma bisection
    bisect_rel_tol: float = 1e-4
    bisect_max_doublings: int = 60
    # Riccati iteration cap used inside bisection probes (slow convergence near
    # the optimum is treated as infeasibility of the probe)
    bisect_riccati_max_iter: int = 30_000
    # strict LMI margins: eps = lmi_margin_rtol * block scale
    lmi_margin_rtol: float = 1e-7
    # conic solver targets
    solver_feastol: float = 1e-8
    solver_reltol: float = 1e-8
    solver_max_iter: int = 100
    # bound optimization defaults
    alternation_rounds: int = 20
    alternation_inner_tol: float = 1e-4
    # region verification
    verify_prefix_steps: int = 50

    def with_overrides(self, **kw) -> "Tolerances":
        return replace(self, **kw)


DEFAULT_TOLERANCES = Tolerances()
