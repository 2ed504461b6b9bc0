"""Existence tests for distributed dynamic controllers from data.

Per vertex there are two conditions at a fixed multiplier level alpha: a
primal one on the measured-output kernel (strictly negative) using the
dual data QMI, and its dual counterpart (strictly positive) using the
raw data-built QMI with the reciprocal multiplier, tied together by the
nonstrict coupling [[P_i, I], [I, Pbar_i]] >= 0.  gamma enters both
squared and inverse-squared, so certification bisects over gamma with an
inner grid on alpha.

The dual condition's outer factor is the annihilator of the primal one.
The primal factor is tall with full column rank, so the annihilator is
realized on the left (kernel of the transpose), built analytically so
that its coordinates keep the control-input slot and the performance row
identifiable: that is what the second kernel (of [0 I Dz^T]) removes.
Controller construction itself is out of scope; the interconnection
dimensions it would need are recorded on the witness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import datadriven as dd
from . import lmi
from . import matrixcore as mc
from . import sdpsolve
from .analysis import (
    AnalysisError,
    InterconnectionGraph,
    ScaleSet,
    _eq8_outer,
    _vertex_constraint_terms,
    check_structured_boundedness,
)

DEFAULT_ALPHA_GRID = (1.0,)
EXTENDED_ALPHA_GRID = tuple(np.logspace(-1.0, 1.0, 13))


class SynthesisError(AnalysisError):
    pass


class DegenerateAnnihilatorError(SynthesisError):
    pass


@dataclass(frozen=True)
class PerformanceSpec:
    """Performance outputs z_i = Cz_i x_i + sum_j CzN_i x_j + Dz_i u_i and
    measurements y_i = C_i x_i (no feedthrough on the measurement)."""

    Cz: tuple          # per vertex, p_i x n_i
    CzN: tuple         # per vertex, p_i x (sum of neighbor dims), ascending
    Dz: tuple          # per vertex, p_i x m_i
    C_meas: tuple      # per vertex, q_i x n_i

    @staticmethod
    def state_performance(graph: InterconnectionGraph) -> "PerformanceSpec":
        """z_i = x_i, y_i = x_i: the cycle-benchmark configuration."""
        Cz, CzN, Dz, Cm = [], [], [], []
        for i in range(graph.L):
            n = graph.state_dims[i]
            a = sum(graph.state_dims[j] for j in graph.neighbors(i))
            Cz.append(np.eye(n))
            CzN.append(np.zeros((n, a)))
            Dz.append(np.zeros((n, graph.input_dims[i])))
            Cm.append(np.eye(n))
        return PerformanceSpec(tuple(Cz), tuple(CzN), tuple(Dz), tuple(Cm))

    def validate(self, graph: InterconnectionGraph):
        for i in range(graph.L):
            n = graph.state_dims[i]
            m = graph.input_dims[i]
            a = sum(graph.state_dims[j] for j in graph.neighbors(i))
            p = mc.as_matrix(self.Cz[i]).shape[0]
            if mc.as_matrix(self.Cz[i]).shape != (p, n):
                raise SynthesisError(f"Cz[{i}] shape mismatch")
            if mc.as_matrix(self.CzN[i]).shape != (p, a):
                raise SynthesisError(f"CzN[{i}] must be {p}x{a}")
            if mc.as_matrix(self.Dz[i]).shape != (p, m):
                raise SynthesisError(f"Dz[{i}] shape mismatch")
            if mc.as_matrix(self.C_meas[i]).shape[1] != n:
                raise SynthesisError(f"C_meas[{i}] shape mismatch")


@dataclass
class SynthesisWitness:
    gamma: float
    alpha: float
    assignment: dict
    problem: lmi.LmiProblem
    outcome: sdpsolve.SolveOutcome
    controller_dims: dict = field(default_factory=dict)  # edge -> n_ij = 3 n_i


@dataclass
class SynthesisResult:
    status: str                    # "feasible" | "infeasible" | "inconclusive"
    witness: SynthesisWitness | None = None
    attempts: list = field(default_factory=list)   # (alpha, outcome status)

    @property
    def succeeded(self) -> bool:
        return self.status == "feasible"


def psi_basis(C_meas, widths, rank_tol: float = mc.DEFAULT_RANK_TOL) -> np.ndarray:
    """Kernel basis of the measurement row [C_i 0 ... 0] over the primal
    outer-factor columns; widths gives the zero-block column sizes."""
    C_meas = mc.as_matrix(C_meas)
    total = int(sum(widths))
    K = np.zeros((C_meas.shape[0], total))
    K[:, : C_meas.shape[1]] = C_meas
    return mc.kernel_basis(K, rank_tol)


def phi_basis(Dz, widths, rank_tol: float = mc.DEFAULT_RANK_TOL) -> np.ndarray:
    """Kernel basis of [0 I Dz^T] over the annihilator coordinates; widths
    is (free block, control slot m, performance rows p)."""
    Dz = mc.as_matrix(Dz)
    w0, m, p = widths
    if Dz.shape != (p, m):
        raise SynthesisError(f"Dz shape {Dz.shape} does not match widths {widths}")
    K = np.hstack([np.zeros((m, w0)), np.eye(m), Dz.T])
    return mc.kernel_basis(K, rank_tol)


def annihilator_or_raise(M, rank_tol: float = mc.DEFAULT_RANK_TOL) -> np.ndarray:
    """Left annihilator with the empty case promoted to an error."""
    N = mc.left_annihilator(M, rank_tol)
    if N.shape[1] == 0:
        raise DegenerateAnnihilatorError("outer factor has full row rank; annihilator empty")
    return N


def _eq9_selectors(n, a, d, m, Cz, CzN):
    """Channel selectors for the primal synthesis condition.

    Columns (x_i, neighbor states, l, w): the next state is l + w, the
    multiplier p-channel carries (x, x_N, 0) with the control slot zeroed,
    the performance input is the disturbance w and the output the
    controlled z row (no control feedthrough survives the elimination)."""
    pz = Cz.shape[0]
    cols = 3 * n + a
    Ex = np.zeros((n, cols)); Ex[:, :n] = np.eye(n)
    EN = np.zeros((a, cols)); EN[:, n:n + a] = np.eye(a)
    El = np.zeros((n, cols)); El[:, n + a:2 * n + a] = np.eye(n)
    Ew = np.zeros((n, cols)); Ew[:, 2 * n + a:] = np.eye(n)
    Ez = np.zeros((pz, cols)); Ez[:, :n] = Cz
    if a:
        Ez[:, n:n + a] = CzN
    copies = np.vstack([Ex] * d) if d else np.zeros((0, cols))
    return dict(
        x=Ex, xnext=El + Ew, copies=copies, received=EN,
        mult=np.vstack([El, Ex, EN, np.zeros((m, cols))]),
        perfin=Ew, perfout=Ez,
    )


def dual_outer_annihilator(n, a, d, m, pz, Cz, CzN):
    """Structured basis of the left kernel of the primal outer factor.

    Rows follow the middle-matrix layout (x, xnext, copies, received, l,
    p = (x, x_N, u), w, z); columns are ordered so the last m + pz of them
    are exactly the control slot of the p-channel and the z rows, which is
    the coordinate frame phi_basis expects.  Returns (N, row slice map).
    """
    q = 2 * n + d * n + a + m + pz
    rowdims = [n, n, d * n, a, n, n, a, m, n, pz]
    total = sum(rowdims)
    offs = np.cumsum([0] + rowdims)
    sl = {
        "x": slice(offs[0], offs[1]),
        "xnext": slice(offs[1], offs[2]),
        "copies": slice(offs[2], offs[3]),
        "received": slice(offs[3], offs[4]),
        "l": slice(offs[4], offs[5]),
        "p_x": slice(offs[5], offs[6]),
        "p_N": slice(offs[6], offs[7]),
        "p_u": slice(offs[7], offs[8]),
        "w": slice(offs[8], offs[9]),
        "z": slice(offs[9], offs[10]),
    }
    c2, c3 = 0, n
    c6x, c6N, c6u = n + d * n, 2 * n + d * n, 2 * n + d * n + a
    c8 = 2 * n + d * n + a + m
    N = np.zeros((total, q))
    if d:
        N[sl["x"], c3:c3 + d * n] = -np.tile(np.eye(n), (1, d))
        N[sl["copies"], c3:c3 + d * n] = np.eye(d * n)
    N[sl["x"], c6x:c6x + n] = -np.eye(n)
    N[sl["x"], c8:c8 + pz] = -Cz.T
    N[sl["xnext"], c2:c2 + n] = np.eye(n)
    if a:
        N[sl["received"], c6N:c6N + a] = -np.eye(a)
        N[sl["received"], c8:c8 + pz] = -CzN.T
        N[sl["p_N"], c6N:c6N + a] = np.eye(a)
    N[sl["l"], c2:c2 + n] = -np.eye(n)
    N[sl["p_x"], c6x:c6x + n] = np.eye(n)
    N[sl["p_u"], c6u:c6u + m] = np.eye(m)
    N[sl["w"], c2:c2 + n] = -np.eye(n)
    N[sl["z"], c8:c8 + pz] = np.eye(pz)
    return N, sl


def build_synthesis_primal(builder, graph, scales, i, dual_i: dd.QmiSet,
                           spec: PerformanceSpec, alpha: float, gamma: float,
                           storage_var: str):
    """Primal condition for vertex i at fixed (alpha, gamma); strict <0 on
    the measurement kernel."""
    check_structured_boundedness(dual_i)
    n = graph.state_dims[i]
    m = graph.input_dims[i]
    nbrs = graph.neighbors(i)
    d = len(nbrs)
    a = sum(graph.state_dims[j] for j in nbrs)
    Cz = mc.as_matrix(spec.Cz[i])
    CzN = mc.as_matrix(spec.CzN[i])
    sel = _eq9_selectors(n, a, d, m, Cz, CzN)
    psi = psi_basis(spec.C_meas[i], (n, a, n, n))
    sel = {k: v @ psi for k, v in sel.items()}
    terms, const, dim = _vertex_constraint_terms(
        graph, scales, i, dual_i, sel,
        ("fixed", alpha * dual_i.scale), ("fixed", -float(gamma) ** 2),
        storage_var,
    )
    expr = lmi.AffineSym.build(dim, const, terms)
    builder.add_constraint(expr, lmi.Sense.NEG_DEF, name=f"synth-primal[{i}]")
    return expr


def build_synthesis_dual(builder, graph, scales_bar, i, primal_i: dd.QmiSet,
                         spec: PerformanceSpec, beta: float, gamma: float,
                         storage_var: str):
    """Dual condition for vertex i: strict >0 on the annihilator of the
    primal outer factor restricted by the control-slot kernel, with the
    raw data QMI and the reciprocal multiplier beta = 1/alpha."""
    n = graph.state_dims[i]
    m = graph.input_dims[i]
    nbrs = graph.neighbors(i)
    d = len(nbrs)
    a = sum(graph.state_dims[j] for j in nbrs)
    Cz = mc.as_matrix(spec.Cz[i])
    CzN = mc.as_matrix(spec.CzN[i])
    pz = Cz.shape[0]
    N, sl = dual_outer_annihilator(n, a, d, m, pz, Cz, CzN)
    phi = phi_basis(spec.Dz[i], (2 * n + d * n + a, m, pz))
    G = N @ phi
    if G.shape[1] == 0:
        raise DegenerateAnnihilatorError(f"vertex {i}: dual factor is empty")
    sel = dict(
        x=G[sl["x"]], xnext=G[sl["xnext"]], copies=G[sl["copies"]],
        received=G[sl["received"]],
        mult=np.vstack([G[sl["l"]], G[sl["p_x"]], G[sl["p_N"]], G[sl["p_u"]]]),
        perfin=G[sl["w"]], perfout=G[sl["z"]],
    )
    terms, const, dim = _vertex_constraint_terms(
        graph, scales_bar, i, primal_i, sel,
        ("fixed", beta * primal_i.scale), ("fixed", -float(gamma) ** -2),
        storage_var,
    )
    expr = lmi.AffineSym.build(dim, const, terms)
    builder.add_constraint(expr, lmi.Sense.POS_DEF, name=f"synth-dual[{i}]")
    return expr


def coupling_lmi(builder, p_var: str, pbar_var: str, n: int, vertex: int):
    """[[P_i, I], [I, Pbar_i]] >= 0, nonstrict as displayed."""
    E1 = np.hstack([np.eye(n), np.zeros((n, n))])
    E2 = np.hstack([np.zeros((n, n)), np.eye(n)])
    const = np.block([
        [np.zeros((n, n)), np.eye(n)],
        [np.eye(n), np.zeros((n, n))],
    ])
    expr = lmi.AffineSym.build(
        2 * n, const, [(p_var, E1.T, E1), (pbar_var, E2.T, E2)]
    )
    builder.add_constraint(expr, lmi.Sense.POS_SEMI, name=f"coupling[{vertex}]")
    return expr


def _build_joint_problem(graph, primals, duals, spec, alpha, gamma) -> lmi.LmiProblem:
    b = lmi.LmiBuilder()
    for i in range(graph.L):
        n = graph.state_dims[i]
        b.add_symmetric(f"P_{i}", n, lmi.VarSign.PD)
        b.add_symmetric(f"Pbar_{i}", n, lmi.VarSign.PD)
    scales = ScaleSet.declare(b, graph, barred=False)
    scales_bar = ScaleSet.declare(b, graph, barred=True)
    for i in range(graph.L):
        build_synthesis_primal(b, graph, scales, i, duals[i], spec, alpha, gamma, f"P_{i}")
        build_synthesis_dual(b, graph, scales_bar, i, primals[i], spec, 1.0 / alpha, gamma, f"Pbar_{i}")
        coupling_lmi(b, f"P_{i}", f"Pbar_{i}", graph.state_dims[i], i)
    return b.build()


def data_qmis(subsystems, bounds):
    """Per-vertex (primal, dual) QMI pairs from subsystem data."""
    primals = [dd.primal_qmi_structured(s, nb) for s, nb in zip(subsystems, bounds)]
    duals = [dd.dual_qmi(p) for p in primals]
    return primals, duals


def certify_synthesis_existence(subsystems, bounds, graph: InterconnectionGraph,
                                spec: PerformanceSpec, gamma: float,
                                alpha_grid=DEFAULT_ALPHA_GRID,
                                opts: sdpsolve.SolveOptions | None = None,
                                qmis=None) -> SynthesisResult:
    """Search the alpha grid for a feasible point at fixed gamma.

    Feasible means a distributed dynamic controller achieving the bound
    exists for every data-consistent interconnected system; the
    conditions are sufficient only, so nothing is ever reported
    impossible, just unknown."""
    spec.validate(graph)
    primals, duals = qmis if qmis is not None else data_qmis(subsystems, bounds)
    attempts = []
    saw_inconclusive = False
    for alpha in alpha_grid:
        if alpha <= 0:
            raise SynthesisError("alpha grid values must be positive")
        problem = _build_joint_problem(graph, primals, duals, spec, alpha, gamma)
        outcome = sdpsolve.solve(problem, opts)
        attempts.append((float(alpha), outcome.status))
        if outcome.succeeded:
            dims = {
                (i, j): 3 * graph.state_dims[i]
                for i, j in graph.ordered_pairs()
            }
            witness = SynthesisWitness(
                float(gamma), float(alpha), outcome.assignment, problem, outcome, dims
            )
            return SynthesisResult("feasible", witness, attempts)
        if outcome.status == sdpsolve.SolveStatus.INCONCLUSIVE:
            saw_inconclusive = True
    return SynthesisResult(
        "inconclusive" if saw_inconclusive else "infeasible", None, attempts
    )


def min_gamma_synthesis(subsystems, bounds, graph: InterconnectionGraph,
                        spec: PerformanceSpec, gamma_interval=(1e-2, 1e3),
                        alpha_grid=DEFAULT_ALPHA_GRID, rel_tol: float = 1e-3,
                        opts: sdpsolve.SolveOptions | None = None):
    """Bisect gamma over the existence test (inner alpha grid).

    Returns (gamma_star, SynthesisResult at gamma_star, BisectResult)."""
    lo, hi = gamma_interval
    lo = max(lo, 1e-8)
    qmis = data_qmis(subsystems, bounds)
    cache = {}
    order = list(alpha_grid)

    def predicate(g):
        res = certify_synthesis_existence(
            subsystems, bounds, graph, spec, g, tuple(order), opts, qmis=qmis
        )
        if res.succeeded:
            # keep the winning alpha first: it tends to stay feasible as
            # the bisection tightens gamma
            a = res.witness.alpha
            order.sort(key=lambda v: (v != a,))
        cache[g] = res
        # adapt to the bisection's outcome protocol
        status = {
            "feasible": sdpsolve.SolveStatus.FEASIBLE,
            "infeasible": sdpsolve.SolveStatus.INFEASIBLE,
            "inconclusive": sdpsolve.SolveStatus.INCONCLUSIVE,
        }[res.status]
        return sdpsolve.SolveOutcome(status, getattr(res.witness, "assignment", None))

    try:
        bres = sdpsolve.bisect_gamma(predicate, lo, hi, rel_tol)
    except sdpsolve.NoFeasiblePointError:
        raise
    return bres.gamma, cache[bres.gamma], bres
