"""Ground truth for experiments: interconnected system models, exact
simulation, true H-infinity norms, and seeded data generation.

The norm oracle runs the bounded-real LMI through the gamma bisection and
is cross-checked against a frequency-grid evaluation; the two must agree
to about four digits on the stable systems used here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import datadriven as dd
from . import lmi
from . import matrixcore as mc
from . import sdpsolve
from .analysis import InterconnectionGraph

FREQ_GRID_POINTS = 2048


class OracleError(ValueError):
    pass


class UnstableSystemError(OracleError):
    pass


class MembershipViolationError(OracleError):
    """Generated noise fell outside its own declared bound (internal bug)."""


@dataclass(frozen=True)
class SystemModel:
    """Lumped state-space matrices plus optional interconnection blocks."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    graph: InterconnectionGraph | None = None
    A_diag: tuple = ()
    A_coupling: tuple = ()   # ((i, j), block) for ordered adjacent pairs
    B_diag: tuple = ()
    C_diag: tuple = ()
    D_diag: tuple = ()

    def __post_init__(self):
        for name in ("A", "B", "C", "D"):
            object.__setattr__(self, name, mc.as_matrix(getattr(self, name)))
        n = self.A.shape[0]
        if self.A.shape[1] != n or self.B.shape[0] != n:
            raise OracleError("A must be square and stack with B")
        if self.C.shape[1] != n or self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise OracleError("C/D dimensions inconsistent")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def spectral_radius(self) -> float:
        return float(np.abs(np.linalg.eigvals(self.A)).max())

    def state_slice(self, i: int) -> slice:
        dims = self.graph.state_dims
        start = sum(dims[:i])
        return slice(start, start + dims[i])

    def input_slice(self, i: int) -> slice:
        dims = self.graph.input_dims
        start = sum(dims[:i])
        return slice(start, start + dims[i])

    @staticmethod
    def from_blocks(graph: InterconnectionGraph, A_diag, A_coupling,
                    B_diag, C_diag=None, D_diag=None) -> "SystemModel":
        """Assemble the lumped matrices; couplings exist only on edges."""
        ns, ms = graph.state_dims, graph.input_dims
        n, m = sum(ns), sum(ms)
        A = np.zeros((n, n))
        B = np.zeros((n, m))
        xs = np.cumsum([0] + list(ns))
        us = np.cumsum([0] + list(ms))
        A_diag = [mc.as_matrix(Ai) for Ai in A_diag]
        for i in range(graph.L):
            A[xs[i]:xs[i + 1], xs[i]:xs[i + 1]] = A_diag[i]
            B[xs[i]:xs[i + 1], us[i]:us[i + 1]] = mc.as_matrix(B_diag[i])
        coupling = []
        pairs = set(graph.ordered_pairs())
        for (i, j), blk in (A_coupling.items() if isinstance(A_coupling, dict) else A_coupling):
            if (i, j) not in pairs:
                raise OracleError(f"coupling ({i},{j}) is not an edge")
            blk = mc.as_matrix(blk)
            A[xs[i]:xs[i + 1], xs[j]:xs[j + 1]] = blk
            coupling.append(((i, j), blk))
        C_diag = [np.eye(ns[i]) for i in range(graph.L)] if C_diag is None else [
            mc.as_matrix(Ci) for Ci in C_diag
        ]
        D_diag = [np.zeros((C_diag[i].shape[0], ms[i])) for i in range(graph.L)] if D_diag is None else [
            mc.as_matrix(Di) for Di in D_diag
        ]
        from scipy.linalg import block_diag

        C = block_diag(*C_diag)
        D = block_diag(*D_diag)
        return SystemModel(
            A, B, C, D, graph,
            tuple(A_diag), tuple(coupling), tuple(mc.as_matrix(Bi) for Bi in B_diag),
            tuple(C_diag), tuple(D_diag),
        )


def example1_system() -> SystemModel:
    """Three weakly coupled first-order subsystems in a chain, unit B and C."""
    graph = InterconnectionGraph(3, ((0, 1), (1, 2)), (1, 1, 1), (1, 1, 1))
    A_diag = [np.array([[0.5]]), np.array([[0.4]]), np.array([[0.6]])]
    cpl = {(0, 1): [[0.1]], (1, 0): [[0.1]], (1, 2): [[0.1]], (2, 1): [[0.1]]}
    B_diag = [np.eye(1)] * 3
    return SystemModel.from_blocks(graph, A_diag, cpl, B_diag)


@dataclass(frozen=True)
class ExperimentConfig:
    N: int
    sigma: float
    noise_model: str = "ball"      # "ball": ||w(k)||_2 <= sigma; "interval": per component
    seed: int = 0
    x0: np.ndarray | None = None
    input_std: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise OracleError("sigma must be positive")
        if self.N < 1:
            raise OracleError("N must be positive")
        if self.noise_model not in ("ball", "interval"):
            raise OracleError(f"unknown noise model {self.noise_model!r}")


def simulate(sys: SystemModel, U, W, x0=None) -> dd.TrajectoryData:
    """Exact recursion x(k+1) = A x(k) + B u(k) + w(k)."""
    U = mc.as_matrix(U)
    W = mc.as_matrix(W)
    n, m = sys.n, sys.m
    N = U.shape[1]
    if U.shape[0] != m or W.shape != (n, N):
        raise OracleError("input/noise horizons do not match the system")
    X = np.zeros((n, N + 1))
    X[:, 0] = np.zeros(n) if x0 is None else np.asarray(x0, float)
    for k in range(N):
        X[:, k + 1] = sys.A @ X[:, k] + sys.B @ U[:, k] + W[:, k]
    return dd.TrajectoryData(X, U)


def split_by_vertex(sys: SystemModel, traj: dd.TrajectoryData):
    """Per-subsystem data with neighbor stacks in ascending vertex order."""
    if sys.graph is None:
        raise OracleError("system has no interconnection structure")
    g = sys.graph
    out = []
    for i in range(g.L):
        own = dd.TrajectoryData(
            traj.X[sys.state_slice(i), :], traj.U_minus[sys.input_slice(i), :]
        )
        ids = g.neighbors(i)
        stack = (
            np.vstack([traj.X_minus[sys.state_slice(j), :] for j in ids])
            if ids else np.zeros((0, traj.N))
        )
        out.append(dd.SubsystemData(own, stack, ids, tuple(g.state_dims[j] for j in ids)))
    return out


def freq_grid_norm(sys: SystemModel, points: int = FREQ_GRID_POINTS) -> float:
    """Max largest singular value of C (e^{j theta} I - A)^{-1} B + D."""
    best = 0.0
    eye = np.eye(sys.n)
    for theta in np.linspace(0.0, 2.0 * np.pi, points, endpoint=False):
        G = sys.C @ np.linalg.solve(np.exp(1j * theta) * eye - sys.A, sys.B) + sys.D
        best = max(best, float(np.linalg.svd(G, compute_uv=False)[0]))
    return best


def _bounded_real_problem(sys: SystemModel, gamma: float) -> lmi.LmiProblem:
    n, m = sys.n, sys.m
    F = np.hstack([sys.A, sys.B])
    G = np.hstack([np.eye(n), np.zeros((n, m))])
    const = np.block([
        [sys.C.T @ sys.C, sys.C.T @ sys.D],
        [sys.D.T @ sys.C, sys.D.T @ sys.D - gamma**2 * np.eye(m)],
    ])
    b = lmi.LmiBuilder()
    b.add_symmetric("P", n, lmi.VarSign.PD)
    expr = lmi.AffineSym.build(
        n + m, const, [("P", F.T, F), ("P", -G.T, G)]
    )
    b.add_constraint(expr, lmi.Sense.NEG_DEF, name="bounded-real")
    return b.build()


def hinf_norm(sys: SystemModel, rel_tol: float = 1e-5,
              opts: sdpsolve.SolveOptions | None = None) -> float:
    """True H-infinity norm via bounded-real bisection.

    Only defined for Schur-stable A; the frequency grid provides the
    bracketing start and the independent cross-check in the tests."""
    if sys.spectral_radius >= 1.0:
        raise UnstableSystemError(
            f"spectral radius {sys.spectral_radius:.4f} >= 1; norm unbounded"
        )

    def predicate(g):
        return sdpsolve.solve(_bounded_real_problem(sys, g), opts)

    hi = max(1.0, 2.0 * float(np.linalg.svd(sys.D, compute_uv=False).max(initial=0.0)))
    for _ in range(60):
        if predicate(hi).succeeded:
            break
        hi *= 2.0
    else:
        raise OracleError("could not bracket the norm from above")
    res = sdpsolve.bisect_gamma(predicate, 0.0, hi, rel_tol=rel_tol)
    return res.gamma


def random_cycle_system(L: int, n_i: int = 1, diag_range=(0.0, 1.0),
                        coupling_range=(0.0, 0.1), seed: int = 0) -> SystemModel:
    """Cycle of L single-state subsystems with uniformly drawn dynamics.

    Instability is possible and allowed; the spectral radius is available
    on the returned model."""
    if L < 3:
        raise OracleError("a cycle needs at least three vertices")
    rng = np.random.default_rng(seed)
    edges = tuple((i, (i + 1) % L) for i in range(L))
    graph = InterconnectionGraph(L, edges, (n_i,) * L, (n_i,) * L)
    A_diag = [np.diag(rng.uniform(*diag_range, size=n_i)) for _ in range(L)]
    coupling = {}
    for i in range(L):
        for j in graph.neighbors(i):
            coupling[(i, j)] = rng.uniform(*coupling_range, size=(n_i, n_i))
    B_diag = [np.eye(n_i)] * L
    return SystemModel.from_blocks(graph, A_diag, coupling, B_diag)


@dataclass
class ExperimentData:
    trajectory: dd.TrajectoryData
    noise: np.ndarray
    inputs: np.ndarray
    lumped_bound: dd.NoiseBound
    subsystems: list = field(default_factory=list)
    vertex_bounds: list = field(default_factory=list)
    config: ExperimentConfig | None = None


def _draw_noise(rng, n, N, sigma, model):
    if model == "interval":
        return rng.uniform(-sigma, sigma, size=(n, N))
    W = np.empty((n, N))
    for k in range(N):
        v = rng.standard_normal(n)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            v = np.ones(n)
            norm = np.sqrt(n)
        W[:, k] = (v / norm) * sigma * rng.uniform() ** (1.0 / n)
    return W


def generate_experiment(sys: SystemModel, cfg: ExperimentConfig) -> ExperimentData:
    """Simulate one seeded experiment and build the matching noise bounds.

    The recorded noise is replayed through noise_membership for every
    bound handed out; a violation is an internal bug, not a data issue."""
    rng = np.random.default_rng(cfg.seed)
    U = cfg.input_std * rng.standard_normal((sys.m, cfg.N))
    W = _draw_noise(rng, sys.n, cfg.N, cfg.sigma, cfg.noise_model)
    traj = simulate(sys, U, W, cfg.x0)
    lumped_sigma = cfg.sigma * (np.sqrt(sys.n) if cfg.noise_model == "interval" else 1.0)
    lumped = dd.energy_bound(lumped_sigma, cfg.N, sys.n)
    if not dd.noise_membership(W, lumped):
        raise MembershipViolationError("lumped bound violated by generated noise")
    data = ExperimentData(traj, W, U, lumped, config=cfg)
    if sys.graph is not None:
        data.subsystems = split_by_vertex(sys, traj)
        for i in range(sys.graph.L):
            n_i = sys.graph.state_dims[i]
            vs = cfg.sigma * (np.sqrt(n_i) if cfg.noise_model == "interval" else 1.0)
            bound = dd.energy_bound(vs, cfg.N, n_i)
            if not dd.noise_membership(W[sys.state_slice(i), :], bound):
                raise MembershipViolationError(f"vertex {i} bound violated")
            data.vertex_bounds.append(bound)
    return data
