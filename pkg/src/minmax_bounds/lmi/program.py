"""Conic programs in a standard form: linear objective, affine PSD blocks.

A program consists of named decision blocks (scalars, symmetric matrices,
rectangular matrices, vectors), named constant parameter blocks, a linear
objective (optionally with terms bilinear between one variable and one
parameter), affine matrix-valued constraints required positive semidefinite,
and affine equality constraints.

Constraint coefficient matrices act on *packed* block representations:
symmetric blocks are packed with svec (sqrt(2)-scaled off-diagonals), matrices
row-major, scalars as length-1 vectors.  Builders assemble coefficients by
probing an affine numpy callback on basis elements, so the stored program is
exactly the callback's affine map.

The Lagrangian dual of any program in this form is again a program in this
form and is constructed mechanically by :meth:`ConicProgram.dualize`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import smat, svec, svec_dim

__all__ = [
    "VarBlock",
    "ParamBlock",
    "PsdConstraint",
    "EqConstraint",
    "Objective",
    "ConicProgram",
    "StandardForm",
]


def _pack(kind, shape, value):
    value = np.asarray(value, dtype=float)
    if kind == "scalar":
        return np.atleast_1d(value).ravel()[:1]
    if kind == "symmetric":
        return svec(value)
    if kind == "matrix":
        return value.reshape(shape[0] * shape[1])
    if kind == "vector":
        return value.reshape(shape[0])
    raise ValueError(f"unknown block kind {kind!r}")


def _unpack(kind, shape, packed):
    packed = np.asarray(packed, dtype=float)
    if kind == "scalar":
        return float(packed[0])
    if kind == "symmetric":
        return smat(packed)
    if kind == "matrix":
        return packed.reshape(shape)
    if kind == "vector":
        return packed.copy()
    raise ValueError(f"unknown block kind {kind!r}")


def _zero(kind, shape):
    if kind == "scalar":
        return 0.0
    if kind == "symmetric":
        return np.zeros((shape[0], shape[0]))
    if kind == "matrix":
        return np.zeros(shape)
    if kind == "vector":
        return np.zeros(shape[0])
    raise ValueError(f"unknown block kind {kind!r}")


def _block_size(kind, shape):
    if kind == "scalar":
        return 1
    if kind == "symmetric":
        return svec_dim(shape[0])
    if kind == "matrix":
        return shape[0] * shape[1]
    if kind == "vector":
        return shape[0]
    raise ValueError(f"unknown block kind {kind!r}")


def _basis_elements(kind, shape):
    """Yield unpacked basis elements spanning the packed space."""
    size = _block_size(kind, shape)
    for t in range(size):
        e = np.zeros(size)
        e[t] = 1.0
        yield t, _unpack(kind, shape, e)


@dataclass(frozen=True)
class VarBlock:
    name: str
    kind: str  # scalar | symmetric | matrix | vector
    shape: tuple

    @property
    def size(self) -> int:
        return _block_size(self.kind, self.shape)


@dataclass
class ParamBlock:
    name: str
    kind: str
    shape: tuple
    value: object = None

    @property
    def size(self) -> int:
        return _block_size(self.kind, self.shape)

    def packed_value(self) -> np.ndarray:
        if self.value is None:
            raise ValueError(f"parameter {self.name!r} has no value")
        return _pack(self.kind, self.shape, self.value)


@dataclass
class PsdConstraint:
    """svec(M) = const + sum_v coeffs[v] x_v + sum_p param_coeffs[p] theta_p; M >= 0."""

    name: str
    dim: int
    coeffs: dict = field(default_factory=dict)
    param_coeffs: dict = field(default_factory=dict)
    const: np.ndarray = None


@dataclass
class EqConstraint:
    """0 = const + sum_v coeffs[v] x_v + sum_p param_coeffs[p] theta_p."""

    name: str
    rows: int
    coeffs: dict = field(default_factory=dict)
    param_coeffs: dict = field(default_factory=dict)
    const: np.ndarray = None


@dataclass
class Objective:
    sense: str = "min"  # min | max
    lin: dict = field(default_factory=dict)  # var -> (size,)
    bilin: dict = field(default_factory=dict)  # (var, param) -> (var.size, param.size)
    const: float = 0.0


@dataclass
class StandardForm:
    """Numeric minimization with parameters folded in.

    minimize c'x + c0  subject to  mat(H_j x + g_j) >= 0,  E x + f = 0.
    """

    c: np.ndarray
    c0: float
    blocks: list  # (name, dim, H, g)
    E: np.ndarray  # (rows, nvar) or None
    f: np.ndarray
    var_order: list  # VarBlock in packing order
    offsets: dict  # var name -> (start, stop)
    negated: bool  # True when the user program was a maximization

    @property
    def nvar(self) -> int:
        return int(self.c.size)

    def unpack_x(self, x) -> dict:
        out = {}
        for vb in self.var_order:
            a, b = self.offsets[vb.name]
            out[vb.name] = _unpack(vb.kind, vb.shape, x[a:b])
        return out

    def user_objective(self, x) -> float:
        val = float(self.c @ x + self.c0)
        return -val if self.negated else val


class ConicProgram:
    """Mutable container for one conic program; see module docstring."""

    def __init__(self, sense: str = "min", name: str = "program"):
        if sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        self.name = name
        self.variables: dict[str, VarBlock] = {}
        self.params: dict[str, ParamBlock] = {}
        self.objective = Objective(sense=sense)
        self.psd_constraints: list[PsdConstraint] = []
        self.eq_constraints: list[EqConstraint] = []

    # ---------------- declaration ----------------

    def add_scalar(self, name):
        return self._add_var(VarBlock(name, "scalar", (1,)))

    def add_symmetric(self, name, dim):
        return self._add_var(VarBlock(name, "symmetric", (int(dim), int(dim))))

    def add_matrix(self, name, rows, cols):
        return self._add_var(VarBlock(name, "matrix", (int(rows), int(cols))))

    def add_vector(self, name, rows):
        return self._add_var(VarBlock(name, "vector", (int(rows),)))

    def _add_var(self, vb: VarBlock):
        if vb.name in self.variables or vb.name in self.params:
            raise ValueError(f"duplicate block name {vb.name!r}")
        self.variables[vb.name] = vb
        return vb

    def add_param(self, name, kind, shape, value=None):
        if name in self.variables or name in self.params:
            raise ValueError(f"duplicate block name {name!r}")
        pb = ParamBlock(name, kind, tuple(shape), value)
        self.params[name] = pb
        return pb

    def set_param(self, name, value):
        self.params[name].value = value

    def _block(self, name):
        if name in self.variables:
            return self.variables[name], False
        if name in self.params:
            return self.params[name], True
        raise KeyError(f"unknown block {name!r}")

    # ---------------- assembly by probing ----------------

    def _probe(self, fn, names, pack_out):
        """Extract (const, per-block coefficient matrices) of an affine map."""
        zeros = {}
        for nm in names:
            blk, _ = self._block(nm)
            zeros[nm] = _zero(blk.kind, blk.shape)
        const = pack_out(fn(dict(zeros)))
        coeffs = {}
        for nm in names:
            blk, _ = self._block(nm)
            cols = np.zeros((const.size, blk.size))
            for t, basis in _basis_elements(blk.kind, blk.shape):
                vals = dict(zeros)
                vals[nm] = basis
                cols[:, t] = pack_out(fn(vals)) - const
            coeffs[nm] = cols
        return const, coeffs

    def add_psd_constraint(self, name, dim, fn, blocks=()):
        """Constrain the symmetric matrix fn({block: value}) to be PSD.

        ``fn`` must be affine (jointly) in the listed variable/parameter
        blocks; its value at zero provides the constant part.
        """
        const, coeffs = self._probe(fn, blocks, lambda M: svec(np.asarray(M, float)))
        con = PsdConstraint(name=name, dim=int(dim), const=const)
        if const.size != svec_dim(int(dim)):
            raise ValueError(f"constraint {name!r}: fn output does not match dim {dim}")
        for nm, C in coeffs.items():
            _, is_param = self._block(nm)
            if np.any(C):
                (con.param_coeffs if is_param else con.coeffs)[nm] = C
        self.psd_constraints.append(con)
        return con

    def add_eq_constraint(self, name, fn, blocks=()):
        """Constrain fn({block: value}) == 0 (the output array is flattened)."""
        const, coeffs = self._probe(fn, blocks, lambda M: np.asarray(M, float).ravel())
        con = EqConstraint(name=name, rows=const.size, const=const)
        for nm, C in coeffs.items():
            _, is_param = self._block(nm)
            if np.any(C):
                (con.param_coeffs if is_param else con.coeffs)[nm] = C
        self.eq_constraints.append(con)
        return con

    def add_objective_term(self, var_name, coeff_fn_or_vec):
        """Add a linear objective term c' x_var (packed coefficients)."""
        vb = self.variables[var_name]
        vec = np.asarray(coeff_fn_or_vec, dtype=float).ravel()
        if vec.size != vb.size:
            raise ValueError(f"objective term for {var_name!r} has wrong length")
        self.objective.lin[var_name] = self.objective.lin.get(var_name, 0) + vec

    def add_bilinear_objective_term(self, var_name, param_name, T):
        """Add x_var' T theta_param to the objective (packed on both sides)."""
        vb = self.variables[var_name]
        pb = self.params[param_name]
        T = np.asarray(T, dtype=float)
        if T.shape != (vb.size, pb.size):
            raise ValueError("bilinear coefficient block has wrong shape")
        key = (var_name, param_name)
        self.objective.bilin[key] = self.objective.bilin.get(key, 0) + T

    # ---------------- bookkeeping ----------------

    def var_offsets(self):
        offsets, pos = {}, 0
        order = list(self.variables.values())
        for vb in order:
            offsets[vb.name] = (pos, pos + vb.size)
            pos += vb.size
        return order, offsets, pos

    def validate(self):
        """Every constraint references only declared blocks; shapes consistent."""
        for con in self.psd_constraints + self.eq_constraints:
            out_rows = svec_dim(con.dim) if isinstance(con, PsdConstraint) else con.rows
            if con.const.size != out_rows:
                raise ValueError(f"{con.name}: constant has wrong length")
            for nm, C in con.coeffs.items():
                if nm not in self.variables:
                    raise ValueError(f"{con.name}: unknown variable {nm!r}")
                if C.shape != (out_rows, self.variables[nm].size):
                    raise ValueError(f"{con.name}: bad coefficient shape for {nm!r}")
            for nm, C in con.param_coeffs.items():
                if nm not in self.params:
                    raise ValueError(f"{con.name}: unknown parameter {nm!r}")
                if C.shape != (out_rows, self.params[nm].size):
                    raise ValueError(f"{con.name}: bad coefficient shape for {nm!r}")
        for nm in self.objective.lin:
            if nm not in self.variables:
                raise ValueError(f"objective references unknown variable {nm!r}")
        for v, p in self.objective.bilin:
            if v not in self.variables or p not in self.params:
                raise ValueError(f"objective bilinear term references unknown blocks ({v}, {p})")
        if not np.isfinite(self.objective.const):
            raise ValueError("objective constant is not finite")
        return True

    def constraint(self, name):
        for con in self.psd_constraints + self.eq_constraints:
            if con.name == name:
                return con
        raise KeyError(f"no constraint named {name!r}")

    # ---------------- numeric instantiation ----------------

    def instantiate(self) -> StandardForm:
        """Fold parameter values in and produce a plain minimization."""
        self.validate()
        order, offsets, nvar = self.var_offsets()
        packed_params = {nm: pb.packed_value() for nm, pb in self.params.items()}

        sign = -1.0 if self.objective.sense == "max" else 1.0
        c = np.zeros(nvar)
        for nm, vec in self.objective.lin.items():
            a, b = offsets[nm]
            c[a:b] += sign * vec
        for (vn, pn), T in self.objective.bilin.items():
            a, b = offsets[vn]
            c[a:b] += sign * (T @ packed_params[pn])
        c0 = sign * self.objective.const

        blocks = []
        for con in self.psd_constraints:
            rows = con.const.size
            H = np.zeros((rows, nvar))
            for nm, C in con.coeffs.items():
                a, b = offsets[nm]
                H[:, a:b] += C
            g = con.const.copy()
            for nm, C in con.param_coeffs.items():
                g += C @ packed_params[nm]
            blocks.append((con.name, con.dim, H, g))

        E_rows, f_rows = [], []
        for con in self.eq_constraints:
            rows = con.rows
            E = np.zeros((rows, nvar))
            for nm, C in con.coeffs.items():
                a, b = offsets[nm]
                E[:, a:b] += C
            f = con.const.copy()
            for nm, C in con.param_coeffs.items():
                f += C @ packed_params[nm]
            E_rows.append(E)
            f_rows.append(f)
        E = np.vstack(E_rows) if E_rows else None
        f = np.concatenate(f_rows) if f_rows else np.zeros(0)

        return StandardForm(
            c=c, c0=float(c0), blocks=blocks, E=E, f=f,
            var_order=order, offsets=offsets, negated=(sign < 0),
        )

    # ---------------- transformations ----------------

    def copy(self) -> "ConicProgram":
        out = ConicProgram(sense=self.objective.sense, name=self.name)
        out.variables = dict(self.variables)
        out.params = {nm: ParamBlock(pb.name, pb.kind, pb.shape, pb.value) for nm, pb in self.params.items()}
        out.objective = Objective(
            sense=self.objective.sense,
            lin={k: np.array(v) for k, v in self.objective.lin.items()},
            bilin={k: np.array(v) for k, v in self.objective.bilin.items()},
            const=self.objective.const,
        )
        for con in self.psd_constraints:
            out.psd_constraints.append(PsdConstraint(
                name=con.name, dim=con.dim,
                coeffs={k: np.array(v) for k, v in con.coeffs.items()},
                param_coeffs={k: np.array(v) for k, v in con.param_coeffs.items()},
                const=np.array(con.const),
            ))
        for con in self.eq_constraints:
            out.eq_constraints.append(EqConstraint(
                name=con.name, rows=con.rows,
                coeffs={k: np.array(v) for k, v in con.coeffs.items()},
                param_coeffs={k: np.array(v) for k, v in con.param_coeffs.items()},
                const=np.array(con.const),
            ))
        return out

    def pin_variable_entries(self, var_name, packed_indices, packed_values, tag=None):
        """Add equality constraints fixing packed entries of one variable."""
        vb = self.variables[var_name]
        packed_indices = np.asarray(packed_indices, dtype=int)
        packed_values = np.asarray(packed_values, dtype=float)
        rows = packed_indices.size
        C = np.zeros((rows, vb.size))
        C[np.arange(rows), packed_indices] = 1.0
        con = EqConstraint(
            name=tag or f"pin_{var_name}",
            rows=rows,
            coeffs={var_name: C},
            const=-packed_values,
        )
        self.eq_constraints.append(con)
        return con

    def promote_param(self, param_name, pins=None) -> "ConicProgram":
        """Turn a parameter into a decision variable.

        Any objective term bilinear between a variable v and this parameter is
        only representable if the touched packed entries of v are pinned;
        ``pins`` maps such variable names to (packed_indices, packed_values).
        The pinned entries are fixed by added equality constraints and the
        bilinear term becomes linear in the promoted parameter.
        """
        pins = dict(pins or {})
        out = self.copy()
        pb = out.params.pop(param_name)
        out.variables[param_name] = VarBlock(param_name, pb.kind, pb.shape)

        for con in out.psd_constraints + out.eq_constraints:
            if param_name in con.param_coeffs:
                con.coeffs[param_name] = con.param_coeffs.pop(param_name)

        new_bilin = {}
        for (vn, pn), T in out.objective.bilin.items():
            if pn != param_name:
                new_bilin[(vn, pn)] = T
                continue
            support = np.where(np.any(T != 0.0, axis=1))[0]
            if vn not in pins:
                raise ValueError(
                    f"bilinear objective term ({vn}, {pn}) requires pinning {vn!r}"
                )
            idx, vals = pins[vn]
            idx = np.asarray(idx, dtype=int)
            vals = np.asarray(vals, dtype=float)
            if not np.all(np.isin(support, idx)):
                raise ValueError(
                    f"pin of {vn!r} does not cover the bilinear support rows"
                )
            x_pin = np.zeros(out.variables[vn].size)
            x_pin[idx] = vals
            out.objective.lin[param_name] = (
                out.objective.lin.get(param_name, 0) + T.T @ x_pin
            )
        out.objective.bilin = new_bilin
        for vn, (idx, vals) in pins.items():
            out.pin_variable_entries(vn, idx, vals, tag=f"pin_{vn}_for_{param_name}")
        return out

    def dualize(self, bilinear_param=None) -> "ConicProgram":
        """Mechanical Lagrangian dual.

        For the primal (minimization)

            min  c'x + c0
            s.t. A_j x + B_j theta + g_j  in PSD      (multiplier Z_j >= 0)
                 E_e x + D_e theta + f_e  = 0         (multiplier nu_e free)

        the dual is

            max  c0 - sum_j <Z_j, B_j theta + g_j> + sum_e <nu_e, D_e theta + f_e>
            s.t. for every variable v:  sum_j A_j[v]' svec(Z_j) - sum_e E_e[v]' nu_e = c_v
                 Z_j >= 0.

        Parameters are carried over; their coupling with the duals lands in
        the objective as bilinear terms.  ``bilinear_param``, when given, must
        name a parameter that enters the primal affinely (all parameters do by
        construction; the name is validated) -- it marks the block intended
        for later promotion in the bilinear alternation.
        """
        if self.objective.sense != "min":
            raise ValueError("dualize expects a minimization")
        if self.objective.bilin:
            raise ValueError("primal objective must be linear in the variables")
        if bilinear_param is not None and bilinear_param not in self.params:
            raise ValueError(f"parameter {bilinear_param!r} not present in the program")
        self.validate()

        dual = ConicProgram(sense="max", name=f"dual({self.name})")
        for nm, pb in self.params.items():
            dual.add_param(nm, pb.kind, pb.shape, pb.value)

        dual.objective.const = self.objective.const
        psd_dual_names = {}
        for con in self.psd_constraints:
            znm = f"dual_{con.name}"
            psd_dual_names[con.name] = znm
            dual.add_symmetric(znm, con.dim)
            dual.objective.lin[znm] = dual.objective.lin.get(znm, 0) + (-con.const)
            for pn, B in con.param_coeffs.items():
                key = (znm, pn)
                dual.objective.bilin[key] = dual.objective.bilin.get(key, 0) + (-B)
        eq_dual_names = {}
        for con in self.eq_constraints:
            vnm = f"dual_{con.name}"
            eq_dual_names[con.name] = vnm
            dual.add_vector(vnm, con.rows)
            dual.objective.lin[vnm] = dual.objective.lin.get(vnm, 0) + con.const
            for pn, D in con.param_coeffs.items():
                key = (vnm, pn)
                dual.objective.bilin[key] = dual.objective.bilin.get(key, 0) + D

        # stationarity: one vector equality per primal variable block
        for vb in self.variables.values():
            rows = vb.size
            con_out = EqConstraint(name=f"stationarity_{vb.name}", rows=rows, const=None)
            cv = self.objective.lin.get(vb.name)
            con_out.const = -(np.asarray(cv, float) if cv is not None else np.zeros(rows))
            for con in self.psd_constraints:
                if vb.name in con.coeffs:
                    znm = psd_dual_names[con.name]
                    con_out.coeffs[znm] = con_out.coeffs.get(znm, 0) + con.coeffs[vb.name].T
            for con in self.eq_constraints:
                if vb.name in con.coeffs:
                    vnm = eq_dual_names[con.name]
                    con_out.coeffs[vnm] = con_out.coeffs.get(vnm, 0) + (-con.coeffs[vb.name].T)
            dual.eq_constraints.append(con_out)

        # cone membership of the PSD multipliers
        for con in self.psd_constraints:
            znm = psd_dual_names[con.name]
            size = svec_dim(con.dim)
            cone = PsdConstraint(
                name=f"cone_{znm}", dim=con.dim,
                coeffs={znm: np.eye(size)}, const=np.zeros(size),
            )
            dual.psd_constraints.append(cone)
        return dual

    # ---------------- text dump ----------------

    def dump_sdpblocks(self, fh):
        """Sparse triplet listing: 'SDPBLOCKS v1' header, then one line per
        nonzero: block-name, row, col, coefficient, component-name (or CONST).
        """
        fh.write("SDPBLOCKS v1\n")

        def component_names(vb):
            if vb.kind == "scalar":
                return [vb.name]
            if vb.kind == "symmetric":
                k = vb.shape[0]
                return [f"{vb.name}[{i},{j}]" for i, j in zip(*np.triu_indices(k))]
            if vb.kind == "matrix":
                r, ccols = vb.shape
                return [f"{vb.name}[{i},{j}]" for i in range(r) for j in range(ccols)]
            return [f"{vb.name}[{i}]" for i in range(vb.shape[0])]

        for con in self.psd_constraints:
            k = con.dim
            rows_idx, cols_idx = np.triu_indices(k)
            for nm, C in list(con.coeffs.items()) + list(con.param_coeffs.items()):
                blk, _ = self._block(nm)
                comps = component_names(blk)
                for t in range(C.shape[1]):
                    col = C[:, t]
                    for pos in np.nonzero(col)[0]:
                        fh.write(
                            f"{con.name} {rows_idx[pos]} {cols_idx[pos]} "
                            f"{float(col[pos])!r} {comps[t]}\n"
                        )
            for pos in np.nonzero(con.const)[0]:
                fh.write(
                    f"{con.name} {rows_idx[pos]} {cols_idx[pos]} "
                    f"{float(con.const[pos])!r} CONST\n"
                )
