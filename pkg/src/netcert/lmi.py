"""Symbolic LMI problems: decision variables, affine symmetric-matrix
expressions, constraints, and lowering to a standard-form SDP.

An AffineSym with terms (v, L, R) denotes

    constant + sum_v sym(L @ value(v) @ R),    sym(M) = (M + M^T)/2,

where scalar variables broadcast to value * I with the identity size
inferred from the factors.  Problems are immutable after construction;
use LmiBuilder to accumulate.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

from . import matrixcore as mc

DEFAULT_MARGIN_REL = 1e-7


class LmiError(ValueError):
    pass


class VarKind(enum.Enum):
    SYMMETRIC = "symmetric"
    SCALAR = "scalar"
    RECT = "rect"


class VarSign(enum.Enum):
    FREE = "free"
    NONNEG = "nonneg"  # scalar >= 0
    PD = "pd"
    PSD = "psd"


class Sense(enum.Enum):
    NEG_DEF = "<0"
    NEG_SEMI = "<=0"
    POS_DEF = ">0"
    POS_SEMI = ">=0"


@dataclass(frozen=True)
class VarDecl:
    name: str
    kind: VarKind
    rows: int
    cols: int
    sign: VarSign = VarSign.FREE

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise LmiError(f"variable {self.name}: dims must be >= 1")
        if self.kind is VarKind.SYMMETRIC and self.rows != self.cols:
            raise LmiError(f"symmetric variable {self.name} must be square")
        if self.kind is VarKind.SCALAR and (self.rows, self.cols) != (1, 1):
            raise LmiError(f"scalar variable {self.name} must be 1x1")
        if self.sign is VarSign.NONNEG and self.kind is not VarKind.SCALAR:
            raise LmiError(f"nonneg sign is for scalars ({self.name})")
        if self.sign in (VarSign.PD, VarSign.PSD) and self.kind is not VarKind.SYMMETRIC:
            raise LmiError(f"PD/PSD sign is for symmetric variables ({self.name})")

    @property
    def scalar_count(self) -> int:
        if self.kind is VarKind.SYMMETRIC:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols


@dataclass(frozen=True)
class Term:
    var: str
    left: np.ndarray
    right: np.ndarray


@dataclass(frozen=True)
class AffineSym:
    dim: int
    constant: np.ndarray
    terms: tuple = ()

    @staticmethod
    def build(dim: int, constant=None, terms=()) -> "AffineSym":
        const = np.zeros((dim, dim)) if constant is None else mc.symmetrize(constant)
        if const.shape != (dim, dim):
            raise LmiError(f"constant has shape {const.shape}, expected ({dim},{dim})")
        tt = []
        for t in terms:
            var, L, R = (t.var, t.left, t.right) if isinstance(t, Term) else t
            L = mc.as_matrix(L)
            R = mc.as_matrix(R)
            if L.shape[0] != dim or R.shape[1] != dim:
                raise LmiError(
                    f"term for {var}: outer dims {L.shape[0]}x{R.shape[1]} != {dim}"
                )
            tt.append(Term(var, L, R))
        return AffineSym(dim, const, tuple(tt))

    def eval(self, assignment: dict) -> np.ndarray:
        """Exact affine evaluation at a full numeric assignment."""
        out = self.constant.copy()
        for t in self.terms:
            if t.var not in assignment:
                raise LmiError(f"assignment missing variable {t.var}")
            val = np.asarray(assignment[t.var], dtype=float)
            if val.ndim == 2 and val.shape == (t.left.shape[1], t.right.shape[0]):
                contrib = t.left @ val @ t.right
            elif val.size == 1:
                k = t.left.shape[1]
                if t.right.shape[0] != k:
                    raise LmiError(f"term for {t.var}: factor dims disagree")
                contrib = float(val.reshape(-1)[0]) * (t.left @ t.right)
            else:
                raise LmiError(
                    f"value for {t.var} has shape {val.shape}, expected "
                    f"({t.left.shape[1]},{t.right.shape[0]})"
                )
            out += 0.5 * (contrib + contrib.T)
        return out


@dataclass(frozen=True)
class Constraint:
    expr: AffineSym
    sense: Sense
    margin: float | None = None  # strictness slack; None -> relative default
    name: str = ""

    def effective_margin(self) -> float:
        if self.sense in (Sense.POS_SEMI, Sense.NEG_SEMI):
            return 0.0
        if self.margin is not None:
            return self.margin
        # floor the scale so strictness survives homogeneous constraints
        scale = max(np.abs(self.expr.constant).max(initial=0.0), 1.0)
        return DEFAULT_MARGIN_REL * scale


@dataclass(frozen=True)
class LmiProblem:
    variables: tuple
    constraints: tuple
    objective: tuple = ()  # ((var, coefficient), ...), minimized; matrix vars enter by trace

    def var(self, name: str) -> VarDecl:
        for v in self.variables:
            if v.name == name:
                return v
        raise LmiError(f"unknown variable {name}")

    def var_names(self):
        return [v.name for v in self.variables]


class LmiBuilder:
    """Accumulates declarations and constraints, then freezes a problem."""

    def __init__(self):
        self._vars: dict[str, VarDecl] = {}
        self._constraints: list[Constraint] = []
        self._objective: dict[str, float] = {}

    def add_symmetric(self, name, dim, sign=VarSign.FREE):
        self._declare(VarDecl(name, VarKind.SYMMETRIC, dim, dim, sign))
        return name

    def add_scalar(self, name, sign=VarSign.FREE):
        self._declare(VarDecl(name, VarKind.SCALAR, 1, 1, sign))
        return name

    def add_rect(self, name, rows, cols):
        self._declare(VarDecl(name, VarKind.RECT, rows, cols))
        return name

    def _declare(self, decl: VarDecl):
        if decl.name in self._vars:
            raise LmiError(f"duplicate variable {decl.name}")
        self._vars[decl.name] = decl

    def add_constraint(self, expr: AffineSym, sense: Sense, margin=None, name=""):
        for t in expr.terms:
            if t.var not in self._vars:
                raise LmiError(f"constraint references undeclared variable {t.var}")
        self._constraints.append(Constraint(expr, sense, margin, name))

    def minimize(self, coefficients: dict[str, float]):
        for v in coefficients:
            if v not in self._vars:
                raise LmiError(f"objective references undeclared variable {v}")
        self._objective = dict(coefficients)

    def build(self) -> LmiProblem:
        return LmiProblem(
            tuple(self._vars.values()),
            tuple(self._constraints),
            tuple(self._objective.items()),
        )


# ---------------------------------------------------------------------------
# Lowering to a standard-form SDP:
#     minimize  c^T y   s.t.   F0_b + sum_k y_k Fk_b  >= 0   for each block b.
# Strict senses get an explicit slack margin; every block is then
# diagonally equilibrated (congruence, exact) and scaled to unit max entry.
# ---------------------------------------------------------------------------


@dataclass
class SdpBlock:
    dim: int
    const: np.ndarray          # F0, after sense normalization/margin/scaling
    coeffs: np.ndarray         # (n_local, dim, dim) stacked Fk for local vars
    var_index: np.ndarray      # global y indices for the local coefficients
    name: str = ""
    scaling: np.ndarray | None = None  # diagonal used for equilibration


@dataclass
class LoweredSdp:
    n_scalars: int
    c: np.ndarray
    blocks: list
    slices: dict                # var name -> slice into y
    problem: LmiProblem
    warnings: list = field(default_factory=list)

    def assignment_from_y(self, y: np.ndarray) -> dict:
        out = {}
        for v in self.problem.variables:
            seg = y[self.slices[v.name]]
            if v.kind is VarKind.SCALAR:
                out[v.name] = float(seg[0])
            elif v.kind is VarKind.RECT:
                out[v.name] = seg.reshape(v.rows, v.cols).copy()
            else:
                M = np.zeros((v.rows, v.rows))
                idx = 0
                for i in range(v.rows):
                    for j in range(i, v.rows):
                        M[i, j] = M[j, i] = seg[idx]
                        idx += 1
                out[v.name] = M
        return out

    def y_from_assignment(self, assignment: dict) -> np.ndarray:
        y = np.zeros(self.n_scalars)
        for v in self.problem.variables:
            val = np.asarray(assignment[v.name], dtype=float)
            if v.kind is VarKind.SCALAR:
                y[self.slices[v.name]] = float(val)
            elif v.kind is VarKind.RECT:
                y[self.slices[v.name]] = val.reshape(-1)
            else:
                seg = []
                for i in range(v.rows):
                    for j in range(i, v.rows):
                        seg.append(val[i, j])
                y[self.slices[v.name]] = seg
        return y


def _basis_matrices(decl: VarDecl):
    """Scalarization basis: value = sum_k y_k B_k (bijective)."""
    if decl.kind is VarKind.SCALAR:
        yield np.ones((1, 1))
        return
    if decl.kind is VarKind.RECT:
        for i in range(decl.rows):
            for j in range(decl.cols):
                B = np.zeros((decl.rows, decl.cols))
                B[i, j] = 1.0
                yield B
        return
    for i in range(decl.rows):
        for j in range(i, decl.rows):
            B = np.zeros((decl.rows, decl.rows))
            B[i, j] = B[j, i] = 1.0
            yield B


def _normalized_form(con: Constraint):
    """Rewrite as G(y) >= 0; returns (constant, sign) with sign applied to terms."""
    eps = con.effective_margin()
    if con.sense in (Sense.POS_SEMI, Sense.POS_DEF):
        return con.expr.constant - eps * np.eye(con.expr.dim), 1.0
    return -con.expr.constant - eps * np.eye(con.expr.dim), -1.0


def _equilibration(con: Constraint, const: np.ndarray) -> np.ndarray:
    """Diagonal congruence scaling from the structural magnitude profile.

    Congruence with a positive diagonal is exact: it never changes the
    feasible set, only the numbers the solver sees.  The dynamic range of
    the scaling is capped so vacuous coordinates are not blown up.
    """
    profile = np.abs(const).sum(axis=0)
    for t in con.expr.terms:
        profile = profile + (np.abs(t.left) @ np.abs(t.right)).sum(axis=0)
    top = profile.max(initial=0.0)
    if top <= 0.0:
        return np.ones(con.expr.dim)
    return 1.0 / np.sqrt(np.maximum(profile, top * 1e-12))


def lower_to_sdp(problem: LmiProblem, equilibrate: bool = True) -> LoweredSdp:
    """Scalarize matrix variables and emit block-diagonal standard form.

    Unused variables are a warning-level diagnostic, not an error.
    """
    slices = {}
    offset = 0
    for v in problem.variables:
        slices[v.name] = slice(offset, offset + v.scalar_count)
        offset += v.scalar_count
    n = offset

    warnings = []
    used = set()
    blocks = []

    def add_block(expr: AffineSym, sense, margin, name):
        con = Constraint(expr, sense, margin, name)
        if expr.dim == 0:
            return
        const, sign = _normalized_form(con)
        local = {}
        for t in expr.terms:
            decl = problem.var(t.var)
            used.add(t.var)
            base = slices[t.var].start
            for k, B in enumerate(_basis_matrices(decl)):
                if decl.kind is VarKind.SCALAR:
                    contrib = t.left @ t.right
                else:
                    contrib = t.left @ B @ t.right
                contrib = sign * 0.5 * (contrib + contrib.T)
                gidx = base + k
                if gidx in local:
                    local[gidx] = local[gidx] + contrib
                else:
                    local[gidx] = contrib
        d = None
        if equilibrate:
            d = _equilibration(con, const)
            const = const * d[:, None] * d[None, :]
            for gidx in local:
                local[gidx] = local[gidx] * d[:, None] * d[None, :]
        scale = max(np.abs(const).max(initial=0.0), 1.0)
        const = const / scale
        idx = np.array(sorted(local), dtype=int)
        coeffs = np.stack([local[g] / scale for g in idx]) if len(idx) else np.zeros(
            (0, expr.dim, expr.dim)
        )
        blocks.append(SdpBlock(expr.dim, const, coeffs, idx, name, d))

    for ci, con in enumerate(problem.constraints):
        add_block(con.expr, con.sense, con.margin, con.name or f"constraint[{ci}]")

    for v in problem.variables:
        if v.sign is VarSign.FREE:
            continue
        expr = AffineSym.build(
            v.rows,
            None,
            [(v.name, np.eye(v.rows), np.eye(v.rows))],
        )
        sense = {
            VarSign.NONNEG: Sense.POS_SEMI,
            VarSign.PSD: Sense.POS_SEMI,
            VarSign.PD: Sense.POS_DEF,
        }[v.sign]
        add_block(expr, sense, None, f"sign[{v.name}]")

    for v in problem.variables:
        if v.name not in used:
            warnings.append(f"variable {v.name} appears in no constraint")

    c = np.zeros(n)
    for name, coef in problem.objective:
        decl = problem.var(name)
        if decl.kind is VarKind.SCALAR:
            c[slices[name].start] += coef
        elif decl.kind is VarKind.SYMMETRIC:
            base = slices[name].start
            k = 0
            for i in range(decl.rows):
                for j in range(i, decl.rows):
                    if i == j:
                        c[base + k] += coef
                    k += 1
        else:
            if decl.rows != decl.cols:
                raise LmiError(f"trace objective needs a square variable ({name})")
            base = slices[name].start
            for i in range(decl.rows):
                c[base + i * decl.cols + i] += coef

    return LoweredSdp(n, c, blocks, slices, problem, warnings)


def check_feasible_at(problem: LmiProblem, assignment: dict, tol: float = 1e-7):
    """Replay an assignment through every constraint (sign blocks included).

    Returns (passed, report) where report rows carry the constraint name,
    the margin eigenvalue of the >=0-normalized form, and the scale used
    for the relative tolerance.
    """
    rows = []
    passed = True
    items = [(c, c.name or f"constraint[{i}]") for i, c in enumerate(problem.constraints)]
    for v in problem.variables:
        if v.sign is VarSign.FREE:
            continue
        expr = AffineSym.build(v.rows, None, [(v.name, np.eye(v.rows), np.eye(v.rows))])
        sense = {
            VarSign.NONNEG: Sense.POS_SEMI,
            VarSign.PSD: Sense.POS_SEMI,
            VarSign.PD: Sense.POS_DEF,
        }[v.sign]
        items.append((Constraint(expr, sense), f"sign[{v.name}]"))
    for con, name in items:
        if con.expr.dim == 0:
            rows.append((name, np.inf, 1.0, True))
            continue
        value = con.expr.eval(assignment)
        sign = 1.0 if con.sense in (Sense.POS_SEMI, Sense.POS_DEF) else -1.0
        margin = float(np.linalg.eigvalsh(sign * value).min()) - con.effective_margin()
        scale = 1.0 + np.abs(con.expr.constant).max(initial=0.0)
        ok = margin >= -tol * scale
        passed = passed and ok
        rows.append((name, margin, scale, ok))
    return passed, rows


def dump_sdpa(lowered: LoweredSdp) -> str:
    """Plain-text SDPA-like sparse dump for external cross-checking.

    Header lines give variable and block counts and block sizes; entries
    follow as "matrix-index block row col value" with matrix index 0 for
    the constant part and k for variable k (upper triangle only).
    """
    out = io.StringIO()
    out.write(f"{lowered.n_scalars}\n")
    out.write(f"{len(lowered.blocks)}\n")
    out.write(" ".join(str(b.dim) for b in lowered.blocks) + "\n")
    out.write(" ".join(f"{v:.17g}" for v in lowered.c) + "\n")
    for bi, blk in enumerate(lowered.blocks, start=1):
        for i in range(blk.dim):
            for j in range(i, blk.dim):
                if blk.const[i, j] != 0.0:
                    out.write(f"0 {bi} {i + 1} {j + 1} {blk.const[i, j]:.17g}\n")
        for local, gidx in enumerate(blk.var_index):
            F = blk.coeffs[local]
            for i in range(blk.dim):
                for j in range(i, blk.dim):
                    if F[i, j] != 0.0:
                        out.write(f"{gidx + 1} {bi} {i + 1} {j + 1} {F[i, j]:.17g}\n")
    return out.getvalue()
