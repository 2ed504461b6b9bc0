"""Dissipativity and H-infinity certification LMIs from data.

The unstructured condition couples a storage matrix P and one multiplier
alpha on the dual data QMI; the structured condition adds full-block
interconnection scales shared pairwise across the per-vertex LMIs, so the
multiplier terms telescope to zero along every edge when the per-vertex
inequalities are summed.

gamma always enters as t = gamma^2, which keeps both conditions affine in
all decision variables and lets the certification minimize t directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import datadriven as dd
from . import lmi
from . import matrixcore as mc
from . import sdpsolve
from .matrixcore import Definiteness


class AnalysisError(ValueError):
    pass


class DualQNotNegativeError(AnalysisError):
    """The data set is not bounded enough for the structured conditions."""


@dataclass(frozen=True)
class InterconnectionGraph:
    """Undirected interconnection structure with per-vertex dimensions."""

    L: int
    edges: tuple
    state_dims: tuple
    input_dims: tuple

    def __post_init__(self):
        if self.L < 1:
            raise AnalysisError("need at least one vertex")
        if len(self.state_dims) != self.L or len(self.input_dims) != self.L:
            raise AnalysisError("dimension lists must have one entry per vertex")
        norm = []
        for i, j in self.edges:
            if i == j:
                raise AnalysisError(f"self-loop at vertex {i}")
            if not (0 <= i < self.L and 0 <= j < self.L):
                raise AnalysisError(f"edge ({i},{j}) out of range")
            norm.append((min(i, j), max(i, j)))
        norm = tuple(sorted(set(norm)))
        object.__setattr__(self, "edges", norm)
        if self.L > 1 and not self._connected():
            raise AnalysisError("interconnection graph must be connected")

    def _connected(self) -> bool:
        seen = {0}
        frontier = [0]
        while frontier:
            v = frontier.pop()
            for j in self.neighbors(v):
                if j not in seen:
                    seen.add(j)
                    frontier.append(j)
        return len(seen) == self.L

    def neighbors(self, i: int) -> tuple:
        return tuple(sorted(
            j for a, b in self.edges for j in (a, b) if i in (a, b) and j != i
        ))

    def ordered_pairs(self):
        """All directed adjacent pairs (sender, receiver)."""
        for a, b in self.edges:
            yield (a, b)
            yield (b, a)


@dataclass(frozen=True)
class SupplyRate:
    """Quadratic supply on (input, output): [u; y]^T [[Q,S],[S^T,R]] [u; y]."""

    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", mc.symmetrize(self.Q))
        object.__setattr__(self, "R", mc.symmetrize(self.R))
        object.__setattr__(self, "S", mc.as_matrix(self.S))
        if self.S.shape != (self.Q.shape[0], self.R.shape[0]):
            raise AnalysisError("supply blocks do not stack")

    @staticmethod
    def hinf(gamma: float, m: int, p: int) -> "SupplyRate":
        return SupplyRate(gamma**2 * np.eye(m), np.zeros((m, p)), -np.eye(p))


@dataclass
class CertificationResult:
    status: str                       # "certified" | "unknown"
    gamma: float | None
    assignment: dict | None
    alphas: dict
    outcome: sdpsolve.SolveOutcome
    problem: lmi.LmiProblem
    meta: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.status == "certified"


@dataclass(frozen=True)
class ScaleSet:
    """Edge-indexed multiplier variable names.

    x11[(i, j)] is the symmetric n_i-sized block for the directed channel
    i -> j: it enters Z_i^11 negated on the sender's LMI and Z_j^22
    positively on the receiver's.  One rectangular x12 block per edge,
    indexed (hi, lo), couples the two channel halves.
    """

    x11: dict
    x12: dict
    barred: bool = False

    @staticmethod
    def declare(builder: lmi.LmiBuilder, graph: InterconnectionGraph,
                barred: bool = False) -> "ScaleSet":
        tag = "Xb" if barred else "X"
        x11, x12 = {}, {}
        for a, b in graph.ordered_pairs():
            x11[(a, b)] = builder.add_symmetric(
                f"{tag}11_{a}_{b}", graph.state_dims[a]
            )
        for lo, hi in graph.edges:
            x12[(hi, lo)] = builder.add_rect(
                f"{tag}12_{hi}_{lo}", graph.state_dims[hi], graph.state_dims[lo]
            )
        return ScaleSet(x11, x12, barred)


def assemble_scales(graph: InterconnectionGraph, scales: ScaleSet, i: int):
    """Symbolic Z_i blocks for vertex i as (Z11, Z12, Z22) AffineSym data.

    Each is returned as a list of per-neighbor contributions
    (var name, sign, transposed, row offset, col offset, rows, cols) over
    the vertex's channel space, ascending neighbor order; Z11 lives on the
    stacked copies of x_i, Z22 on the received neighbor states, Z12
    couples the two.
    """
    n_i = graph.state_dims[i]
    nbrs = graph.neighbors(i)
    z11, z12, z22 = [], [], []
    row_off = 0
    col_off = 0
    for j in nbrs:
        n_j = graph.state_dims[j]
        z11.append((scales.x11[(i, j)], -1.0, False, row_off, row_off, n_i, n_i))
        z22.append((scales.x11[(j, i)], 1.0, False, col_off, col_off, n_j, n_j))
        if j < i:
            z12.append((scales.x12[(i, j)], -1.0, False, row_off, col_off, n_i, n_j))
        else:
            z12.append((scales.x12[(j, i)], 1.0, True, row_off, col_off, n_i, n_j))
        row_off += n_i
        col_off += n_j
    return z11, z12, z22


def eval_scale_blocks(graph: InterconnectionGraph, scales: ScaleSet, i: int,
                      assignment: dict):
    """Numeric (Z_i^11, Z_i^12, Z_i^22) at an assignment, for inspection."""
    n_i = graph.state_dims[i]
    nbrs = graph.neighbors(i)
    d = len(nbrs)
    a = sum(graph.state_dims[j] for j in nbrs)
    Z11 = np.zeros((d * n_i, d * n_i))
    Z12 = np.zeros((d * n_i, a))
    Z22 = np.zeros((a, a))
    z11, z12, z22 = assemble_scales(graph, scales, i)
    for var, sign, tr, r, c, nr, nc in z11:
        Z11[r:r + nr, c:c + nc] = sign * np.atleast_2d(assignment[var])
    for var, sign, tr, r, c, nr, nc in z22:
        Z22[r:r + nr, c:c + nc] = sign * np.atleast_2d(assignment[var])
    for var, sign, tr, r, c, nr, nc in z12:
        V = np.atleast_2d(assignment[var])
        Z12[r:r + nr, c:c + nc] = sign * (V.T if tr else V)
    return Z11, Z12, Z22


# ---------------------------------------------------------------------------
# unstructured condition
# ---------------------------------------------------------------------------


def _eq5_outer(n: int, m: int, C: np.ndarray, D: np.ndarray):
    """Outer factor of the unstructured LMI; columns (x, x_next, u)."""
    p = C.shape[0]
    cols = 2 * n + m
    Ex = np.zeros((n, cols)); Ex[:, :n] = np.eye(n)
    El = np.zeros((n, cols)); El[:, n:2 * n] = np.eye(n)
    Eu = np.zeros((m, cols)); Eu[:, 2 * n:] = np.eye(m)
    Ey = np.zeros((p, cols)); Ey[:, :n] = C; Ey[:, 2 * n:] = D
    rows = [Ex, El, El, Ex, Eu, Eu, Ey]
    return np.vstack(rows), dict(
        x=Ex, l=El, u=Eu, y=Ey,
        mult=np.vstack([El, Ex, Eu]),  # (l, p) section facing the data multiplier
    )


def _multiplier_matrix(q: dd.QmiSet) -> np.ndarray:
    """[[R_D, S_D^T], [S_D, Q_D]] arranged for the (l, p) channel order."""
    return np.block([[q.R, q.S.T], [q.S, q.Q]])


def build_dissipativity_lmi(dual: dd.QmiSet, C, D, supply: SupplyRate | None,
                            gamma_var: str | None = None,
                            builder: lmi.LmiBuilder | None = None) -> lmi.LmiProblem:
    """Unstructured data-based dissipativity LMI.

    With `supply` fixed this is a feasibility problem in (P, alpha); with
    gamma_var set, the H-infinity supply is used with t = gamma^2 as a free
    scalar entering linearly (the -Q block becomes -t I).
    """
    if dual.kind is not dd.QmiKind.DUAL_LUMPED:
        raise AnalysisError("expected a lumped dual QmiSet")
    C = mc.as_matrix(C)
    D = mc.as_matrix(D)
    n, m = dual.n, dual.m
    p = C.shape[0]
    if C.shape[1] != n or D.shape != (p, m):
        raise AnalysisError("C/D dimensions do not match the data set")
    own = builder is None
    b = builder or lmi.LmiBuilder()
    b.add_symmetric("P", n, lmi.VarSign.PD)
    b.add_scalar("alpha", lmi.VarSign.NONNEG)
    _, rows = _eq5_outer(n, m, C, D)
    terms = [
        ("P", -rows["x"].T, rows["x"]),
        ("P", rows["l"].T, rows["l"]),
        ("alpha", -mc.congruence(rows["mult"], _multiplier_matrix(dual)), np.eye(2 * n + m)),
    ]
    if gamma_var is not None:
        if supply is not None:
            raise AnalysisError("pass either a fixed supply or a gamma variable")
        b.add_scalar(gamma_var, lmi.VarSign.NONNEG)
        terms.append((gamma_var, -(rows["u"].T @ rows["u"]), np.eye(2 * n + m)))
        const = rows["y"].T @ rows["y"]
    else:
        if supply.Q.shape[0] != m or supply.R.shape[0] != p:
            raise AnalysisError("supply dimensions do not match the channel")
        const = -(
            rows["u"].T @ supply.Q @ rows["u"]
            + rows["u"].T @ supply.S @ rows["y"]
            + rows["y"].T @ supply.S.T @ rows["u"]
            + rows["y"].T @ supply.R @ rows["y"]
        )
    expr = lmi.AffineSym.build(2 * n + m, const, terms)
    b.add_constraint(expr, lmi.Sense.NEG_DEF, name="dissipativity")
    return b.build() if own else None


def certify_dissipativity(data: dd.TrajectoryData, noise: dd.NoiseBound,
                          C, D, supply: SupplyRate,
                          opts: sdpsolve.SolveOptions | None = None) -> CertificationResult:
    """Feasibility verdict: the supply-rate dissipation inequality holds for
    every system consistent with the data, hence for the true one.

    The conditions are sufficient only; Infeasible/Inconclusive both come
    back as status "unknown"."""
    dual = dd.dual_qmi(dd.primal_qmi_lumped(data, noise))
    problem = build_dissipativity_lmi(dual, C, D, supply)
    outcome = sdpsolve.solve(problem, opts)
    certified = outcome.succeeded
    alphas = {}
    if certified:
        alphas = {"alpha": outcome.assignment["alpha"] / dual.scale}
    return CertificationResult(
        "certified" if certified else "unknown",
        None,
        outcome.assignment,
        alphas,
        outcome,
        problem,
        {"mode": "lumped", "dual_scale": dual.scale},
    )


def hinf_bound_unstructured(data: dd.TrajectoryData, noise: dd.NoiseBound, C, D,
                            opts: sdpsolve.SolveOptions | None = None) -> CertificationResult:
    """Minimize t = gamma^2 subject to the unstructured condition.

    A certified gamma upper-bounds the H-infinity norm of every member of
    the data-consistent set, the true system included."""
    dual = dd.dual_qmi(dd.primal_qmi_lumped(data, noise))
    b = lmi.LmiBuilder()
    build_dissipativity_lmi(dual, C, D, None, gamma_var="t", builder=b)
    b.minimize({"t": 1.0})
    problem = b.build()
    outcome = sdpsolve.solve(problem, opts)
    if not outcome.succeeded:
        return CertificationResult(
            "unknown", None, None, {}, outcome, problem, {"mode": "lumped"}
        )
    gamma = math.sqrt(max(outcome.assignment["t"], 0.0))
    return CertificationResult(
        "certified",
        gamma,
        outcome.assignment,
        {"alpha": outcome.assignment["alpha"] / dual.scale},
        outcome,
        problem,
        {"mode": "lumped", "dual_scale": dual.scale},
    )


# ---------------------------------------------------------------------------
# structured condition
# ---------------------------------------------------------------------------


def _eq8_outer(n: int, a: int, d: int, m: int, C: np.ndarray, D: np.ndarray):
    """Channel selectors of the per-vertex structured LMI.

    Columns (x_i, stacked neighbor states, x_i_next, u_i); the selector
    keys follow the middle-matrix layout: storage pair (x, xnext),
    interconnection pair (copies of x_i sent out, neighbor states
    received), data-multiplier section (l then p = (x, x_N, u)), then the
    performance channel (input u, output y)."""
    p = C.shape[0]
    cols = 2 * n + a + m
    Ex = np.zeros((n, cols)); Ex[:, :n] = np.eye(n)
    EN = np.zeros((a, cols)); EN[:, n:n + a] = np.eye(a)
    El = np.zeros((n, cols)); El[:, n + a:2 * n + a] = np.eye(n)
    Eu = np.zeros((m, cols)); Eu[:, 2 * n + a:] = np.eye(m)
    Ey = np.zeros((p, cols)); Ey[:, :n] = C; Ey[:, 2 * n + a:] = D
    copies = np.vstack([Ex] * d) if d else np.zeros((0, cols))
    return dict(
        x=Ex, xnext=El, copies=copies, received=EN,
        mult=np.vstack([El, Ex, EN, Eu]),
        perfin=Eu, perfout=Ey,
    )


def check_structured_boundedness(dual: dd.QmiSet) -> None:
    """The structured conditions need the primal Q block negative definite
    (a bounded consistency set); on the dual side that is exactly
    Q_D - S_D R_D^{-1} S_D^T < 0."""
    schur = dual.Q - dual.S @ mc.sym_inverse(dual.R) @ dual.S.T
    if mc.definiteness(schur) is not Definiteness.ND:
        raise DualQNotNegativeError(
            "primal data QMI Q block is not negative definite; "
            "the consistency set is unbounded (check informativity and Q_w < 0)"
        )


def _vertex_constraint_terms(graph, scales, i, qmi, selectors,
                             alpha_term, gamma_term, storage_var):
    """Shared assembly of one vertex LMI as (terms, const, dim).

    `selectors` maps the middle-matrix channels (x, xnext, copies,
    received, mult, perfin, perfout) to matrices over a common column
    space.  alpha_term: ("var", name) for a free multiplier or
    ("fixed", value); gamma_term likewise, with fixed value -gamma^2 (or
    -gamma^-2 on the dual side) applied to the performance input.
    """
    Gx = selectors["x"]; Gl = selectors["xnext"]
    Gc = selectors["copies"]; Gr = selectors["received"]
    Gm = selectors["mult"]; Gu = selectors["perfin"]; Gy = selectors["perfout"]
    dim = Gx.shape[1]
    terms = [(storage_var, -Gx.T, Gx), (storage_var, Gl.T, Gl)]
    const = np.zeros((dim, dim))

    z11, z12, z22 = assemble_scales(graph, scales, i)
    for var, sign, tr, r, c, nr, nc in z11:
        Lf = Gc[r:r + nr]
        terms.append((var, sign * Lf.T, Lf))
    for var, sign, tr, r, c, nr, nc in z22:
        Lf = Gr[c:c + nc]
        terms.append((var, sign * Lf.T, Lf))
    for var, sign, tr, r, c, nr, nc in z12:
        Rowf = Gc[r:r + nr]
        Colf = Gr[c:c + nc]
        if tr:
            terms.append((var, 2.0 * sign * Colf.T, Rowf))
        else:
            terms.append((var, 2.0 * sign * Rowf.T, Colf))

    K = -mc.congruence(Gm, _multiplier_matrix(qmi))
    if alpha_term[0] == "var":
        terms.append((alpha_term[1], K, np.eye(dim)))
    else:
        const += alpha_term[1] * K

    if gamma_term[0] == "var":
        terms.append((gamma_term[1], -(Gu.T @ Gu), np.eye(dim)))
    else:
        const += gamma_term[1] * (Gu.T @ Gu)
    const += Gy.T @ Gy
    return terms, const, dim


def build_interconnected_lmi(duals, graph: InterconnectionGraph, C_list, D_list,
                             gamma: float | None = None,
                             gamma_var: str = "t") -> lmi.LmiProblem:
    """Joint structured performance problem over all vertices.

    One constraint per vertex, coupled through edge-shared scales; gamma
    fixed gives feasibility, gamma None adds t = gamma^2 to minimize."""
    if len(duals) != graph.L:
        raise AnalysisError("need one dual QmiSet per vertex")
    for i, q in enumerate(duals):
        if q.kind is not dd.QmiKind.DUAL_STRUCTURED and graph.L > 1:
            raise AnalysisError(f"vertex {i}: expected structured dual QmiSet")
        want = tuple(graph.state_dims[j] for j in graph.neighbors(i))
        if q.kind.is_structured and tuple(q.neighbor_dims) != want:
            raise AnalysisError(f"vertex {i}: neighbor dims {q.neighbor_dims} != graph {want}")
        check_structured_boundedness(q)
    b = lmi.LmiBuilder()
    for i in range(graph.L):
        b.add_symmetric(f"P_{i}", graph.state_dims[i], lmi.VarSign.PD)
        b.add_scalar(f"alpha_{i}", lmi.VarSign.NONNEG)
    scales = ScaleSet.declare(b, graph)
    if gamma is None:
        b.add_scalar(gamma_var, lmi.VarSign.NONNEG)
        gterm = ("var", gamma_var)
    else:
        gterm = ("fixed", -float(gamma) ** 2)
    for i in range(graph.L):
        C_i = mc.as_matrix(C_list[i])
        D_i = mc.as_matrix(D_list[i])
        nbrs = graph.neighbors(i)
        selectors = _eq8_outer(
            graph.state_dims[i],
            sum(graph.state_dims[j] for j in nbrs),
            len(nbrs), graph.input_dims[i], C_i, D_i,
        )
        terms, const, dim = _vertex_constraint_terms(
            graph, scales, i, duals[i], selectors,
            ("var", f"alpha_{i}"), gterm, f"P_{i}",
        )
        b.add_constraint(
            lmi.AffineSym.build(dim, const, terms), lmi.Sense.NEG_DEF,
            name=f"vertex[{i}]",
        )
    if gamma is None:
        b.minimize({gamma_var: 1.0})
    return b.build()


def hinf_bound_structured(subsystems, bounds, graph: InterconnectionGraph,
                          C_list, D_list,
                          opts: sdpsolve.SolveOptions | None = None) -> CertificationResult:
    """Minimize gamma over the joint structured conditions."""
    duals = [
        dd.dual_qmi(dd.primal_qmi_structured(s, nb))
        for s, nb in zip(subsystems, bounds)
    ]
    problem = build_interconnected_lmi(duals, graph, C_list, D_list, gamma=None)
    outcome = sdpsolve.solve(problem, opts)
    if not outcome.succeeded:
        return CertificationResult(
            "unknown", None, None, {}, outcome, problem, {"mode": "structured"}
        )
    gamma = math.sqrt(max(outcome.assignment["t"], 0.0))
    alphas = {
        f"alpha_{i}": outcome.assignment[f"alpha_{i}"] / duals[i].scale
        for i in range(graph.L)
    }
    return CertificationResult(
        "certified", gamma, outcome.assignment, alphas, outcome, problem,
        {"mode": "structured", "dual_scales": [q.scale for q in duals]},
    )


def verify_robust_witness(P, samples, C, D, supply: SupplyRate, tol: float = 1e-9):
    """Replay the model-based dissipation inequality at a certified storage
    matrix for sampled member systems; every entry must come out negative
    definite, anything else is a soundness bug upstream."""
    P = mc.symmetrize(P)
    C = mc.as_matrix(C)
    D = mc.as_matrix(D)
    n = P.shape[0]
    m = D.shape[1]
    report = []
    for A, B in samples:
        A = mc.as_matrix(A)
        B = mc.as_matrix(B)
        outer = np.block([
            [np.eye(n), np.zeros((n, m))],
            [A, B],
            [np.zeros((m, n)), np.eye(m)],
            [C, D],
        ])
        middle = np.block([
            [-P, np.zeros((n, n + m + C.shape[0]))],
            [np.zeros((n, n)), P, np.zeros((n, m + C.shape[0]))],
            [np.zeros((m, 2 * n)), -supply.Q, -supply.S],
            [np.zeros((C.shape[0], 2 * n)), -supply.S.T, -supply.R],
        ])
        value = mc.congruence(outer, middle)
        lam = float(np.linalg.eigvalsh(value).max())
        report.append((lam, lam < tol * (1 + abs(lam))))
    return report
