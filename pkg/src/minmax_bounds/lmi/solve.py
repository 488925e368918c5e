"""Backend interface and the solve entry point for conic programs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from ..config import DEFAULT_TOLERANCES, Tolerances
from ..numerics import smat, svec
from .program import ConicProgram, StandardForm
from .reference_ipm import IpmOptions, IpmResult, solve_standard_form

__all__ = ["SolveStatus", "SolveResult", "SolverBackend", "ReferenceBackend",
           "CvxoptBackend", "solve", "SolverError"]


class SolverError(RuntimeError):
    pass


class SolveStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_TROUBLE = "NumericalTrouble"


@dataclass
class SolveResult:
    status: SolveStatus
    variables: dict = field(default_factory=dict)  # name -> unpacked value
    duals: dict = field(default_factory=dict)      # psd constraint name -> matrix
    eq_duals: dict = field(default_factory=dict)   # eq constraint name -> vector
    objective: float = None
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    backend: str = ""
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


@runtime_checkable
class SolverBackend(Protocol):
    """Synchronous, stateless-per-call solver for instantiated programs."""

    name: str
    max_psd_dim: int
    supports_equalities: bool

    def solve_form(self, form: StandardForm, cfg: Tolerances) -> IpmResult: ...


class ReferenceBackend:
    """In-tree dense interior-point method (the default)."""

    name = "reference-ipm"
    max_psd_dim = 60
    supports_equalities = True

    def solve_form(self, form: StandardForm, cfg: Tolerances) -> IpmResult:
        opts = IpmOptions(
            max_iter=cfg.solver_max_iter,
            feastol=cfg.solver_feastol,
            reltol=cfg.solver_reltol,
        )
        return solve_standard_form(form, opts)


class CvxoptBackend:
    """Adapter to the cvxopt cone LP solver (optional dependency)."""

    name = "cvxopt"
    max_psd_dim = 400
    supports_equalities = True

    def solve_form(self, form: StandardForm, cfg: Tolerances) -> IpmResult:
        try:
            import cvxopt
            import cvxopt.solvers
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise SolverError("cvxopt is not installed") from exc

        n = form.nvar
        Gs, hs, dims_s = [], [], []
        sqrt2 = np.sqrt(2.0)
        for (_, dim, H, g) in form.blocks:
            # svec rows -> full column-major k x k rows, removing the sqrt(2)
            rows, cols = np.triu_indices(dim)
            expand = np.zeros((dim * dim, len(rows)))
            for t, (i, j) in enumerate(zip(rows, cols)):
                w = 1.0 if i == j else 1.0 / sqrt2
                expand[i * dim + j, t] = w
                expand[j * dim + i, t] = w
            Gs.append(-expand @ H)
            hs.append(expand @ g)
            dims_s.append(dim)
        Gc = cvxopt.matrix(np.vstack(Gs)) if Gs else cvxopt.matrix(np.zeros((0, n)))
        hc = cvxopt.matrix(np.concatenate(hs)) if hs else cvxopt.matrix(np.zeros(0))
        kwargs = {}
        if form.E is not None and form.E.size:
            kwargs["A"] = cvxopt.matrix(form.E)
            kwargs["b"] = cvxopt.matrix(-form.f)
        old = dict(cvxopt.solvers.options)
        cvxopt.solvers.options.update({
            "show_progress": False,
            "abstol": cfg.solver_reltol,
            "reltol": cfg.solver_reltol,
            "feastol": cfg.solver_feastol,
            "maxiters": cfg.solver_max_iter,
        })
        try:
            sol = cvxopt.solvers.conelp(
                cvxopt.matrix(form.c), Gc, hc,
                dims={"l": 0, "q": [], "s": dims_s}, **kwargs
            )
        except Exception as exc:
            return IpmResult(status="numerical_trouble", message=f"cvxopt raised: {exc}")
        finally:
            cvxopt.solvers.options.clear()
            cvxopt.solvers.options.update(old)

        status = sol["status"]
        if status == "optimal":
            x = np.array(sol["x"]).ravel()
            duals = []
            pos = 0
            zfull = np.array(sol["z"]).ravel()
            for dim in dims_s:
                Zj = zfull[pos:pos + dim * dim].reshape(dim, dim, order="F")
                duals.append(0.5 * (Zj + Zj.T))
                pos += dim * dim
            nu = np.array(sol["y"]).ravel() if "A" in kwargs else None
            return IpmResult(status="optimal", x=x, duals=duals, nu=nu,
                             objective=form.user_objective(x),
                             residuals={"primal_feas": sol.get("primal infeasibility") or 0.0,
                                        "dual_feas": sol.get("dual infeasibility") or 0.0,
                                        "gap": sol.get("relative gap") or 0.0},
                             iterations=sol.get("iterations", 0))
        if status == "primal infeasible":
            return IpmResult(status="infeasible", message="cvxopt: primal infeasible")
        if status == "dual infeasible":
            return IpmResult(status="unbounded", message="cvxopt: dual infeasible")
        return IpmResult(status="numerical_trouble", message=f"cvxopt status: {status}")


_STATUS_MAP = {
    "optimal": SolveStatus.OPTIMAL,
    "infeasible": SolveStatus.INFEASIBLE,
    "unbounded": SolveStatus.UNBOUNDED,
    "numerical_trouble": SolveStatus.NUMERICAL_TROUBLE,
}

DEFAULT_BACKEND = ReferenceBackend()


def solve(prog: ConicProgram, backend: SolverBackend = None, cfg: Tolerances = None) -> SolveResult:
    """Solve a conic program; never raises on solver failure.

    Backend failures surface as ``NumericalTrouble`` results carrying the
    diagnostic message.  On ``Optimal`` the residuals are recomputed against
    the original (unscaled) program data, and weak duality is checked.
    """
    cfg = DEFAULT_TOLERANCES if cfg is None else cfg
    backend = DEFAULT_BACKEND if backend is None else backend
    form = prog.instantiate()
    for (name, dim, _, _) in form.blocks:
        if dim > backend.max_psd_dim:
            raise SolverError(
                f"constraint {name!r} (dim {dim}) exceeds backend capability "
                f"{backend.max_psd_dim}"
            )
    try:
        raw = backend.solve_form(form, cfg)
    except SolverError:
        raise
    except Exception as exc:
        raw = IpmResult(status="numerical_trouble", message=f"backend raised: {exc}")

    result = SolveResult(
        status=_STATUS_MAP[raw.status],
        objective=raw.objective,
        iterations=raw.iterations,
        backend=backend.name,
        message=raw.message,
        residuals=dict(raw.residuals),
    )
    if raw.status != "optimal":
        return result

    result.variables = form.unpack_x(raw.x)
    psd_names = [name for (name, _, _, _) in form.blocks]
    result.duals = dict(zip(psd_names, raw.duals))
    if raw.nu is not None:
        pos = 0
        for con in prog.eq_constraints:
            result.eq_duals[con.name] = raw.nu[pos:pos + con.rows]
            pos += con.rows

    # residuals against the original data
    pviol = 0.0
    dual_obj = 0.0
    cx = float(form.c @ raw.x) + form.c0
    stat = form.c.copy()
    for (name, dim, H, g), Z in zip(form.blocks, raw.duals):
        val = smat(H @ raw.x + g)
        eigs = np.linalg.eigvalsh(val)
        scale = max(1.0, float(np.max(np.abs(eigs))))
        pviol = max(pviol, max(0.0, -float(eigs[0])) / scale)
        zvec = svec(Z)
        stat -= H.T @ zvec
        dual_obj -= float(zvec @ g)
    if form.E is not None and form.E.size and raw.nu is not None:
        stat += form.E.T @ raw.nu
        dual_obj += float(raw.nu @ form.f)
    dual_obj += form.c0
    dviol = float(np.linalg.norm(stat)) / (1.0 + float(np.linalg.norm(form.c)))
    gap = (cx - dual_obj) / max(1.0, abs(cx))
    result.residuals.update({
        "primal_feas": float(pviol),
        "dual_feas": float(dviol),
        "gap": float(gap),
        "weak_duality_ok": bool(cx - dual_obj >= -max(1e-6, 1e3 * cfg.solver_reltol * max(1.0, abs(cx)))),
    })
    return result
