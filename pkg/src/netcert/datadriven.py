"""Data matrices, noise sets, and the primal/dual QMI parameterizations of
all systems consistent with noisy input-state data.

The primal set description is built directly from shifted data matrices;
the dual description is its blockwise inverse and is the form that plugs
into the robust-analysis LMIs.  Both are stored normalized to unit max
entry with the factor recorded: every membership test and LMI is
positively homogeneous in these matrices, and raw near-noiseless data
produces entries spanning ten orders of magnitude otherwise.
"""

from __future__ import annotations

import csv
import enum
import json
import pathlib
from dataclasses import dataclass

import numpy as np

from . import matrixcore as mc
from .matrixcore import Definiteness

QMI_TOL = 1e-9


class DataError(ValueError):
    pass


class NotInformativeError(DataError):
    pass


class NotStrictlyBoundedError(DataError):
    pass


class DualityViolationError(DataError):
    pass


@dataclass(frozen=True)
class TrajectoryData:
    """State samples x(0..N) and inputs u(0..N-1) with the shifted views."""

    X: np.ndarray        # n x (N+1)
    U_minus: np.ndarray  # m x N

    def __post_init__(self):
        X = mc.as_matrix(self.X)
        U = mc.as_matrix(self.U_minus)
        if X.shape[1] != U.shape[1] + 1 or U.shape[1] < 1:
            raise DataError(
                f"need cols(X) = cols(U) + 1 >= 2, got {X.shape[1]} and {U.shape[1]}"
            )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "U_minus", U)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.U_minus.shape[0]

    @property
    def N(self) -> int:
        return self.U_minus.shape[1]

    @property
    def X_minus(self) -> np.ndarray:
        return self.X[:, :-1]

    @property
    def X_plus(self) -> np.ndarray:
        return self.X[:, 1:]


def split_trajectory(X, U) -> TrajectoryData:
    return TrajectoryData(np.asarray(X, float), np.asarray(U, float))


@dataclass(frozen=True)
class SubsystemData:
    """Local trajectory plus the neighbor-state stack, ascending vertex order."""

    own: TrajectoryData
    X_N_minus: np.ndarray          # (sum_j n_j) x N
    neighbor_ids: tuple            # ascending vertex indices
    neighbor_dims: tuple           # state dims, aligned with neighbor_ids

    def __post_init__(self):
        XN = mc.as_matrix(self.X_N_minus)
        if XN.shape[1] != self.own.N:
            raise DataError("neighbor stack horizon differs from own data")
        if XN.shape[0] != sum(self.neighbor_dims):
            raise DataError("neighbor stack rows do not match recorded dims")
        if len(self.neighbor_ids) != len(self.neighbor_dims):
            raise DataError("neighbor ids and dims differ in length")
        if list(self.neighbor_ids) != sorted(self.neighbor_ids):
            raise DataError("neighbor ids must be ascending")
        object.__setattr__(self, "X_N_minus", XN)

    @property
    def a(self) -> int:
        return self.X_N_minus.shape[0]


@dataclass(frozen=True)
class NoiseBound:
    """Quadratic noise set {W : [W^T; I]^T [[Q_w,S_w],[S_w^T,R_w]] [W^T; I] >= 0}."""

    Q_w: np.ndarray
    S_w: np.ndarray
    R_w: np.ndarray

    def __post_init__(self):
        Q = mc.symmetrize(self.Q_w)
        R = mc.symmetrize(self.R_w)
        S = mc.as_matrix(self.S_w)
        if S.shape != (Q.shape[0], R.shape[0]):
            raise DataError(f"S_w shape {S.shape} does not stack with Q_w/R_w")
        if mc.definiteness(Q) is not Definiteness.ND:
            raise NotStrictlyBoundedError("Q_w must be negative definite for a bounded noise set")
        object.__setattr__(self, "Q_w", Q)
        object.__setattr__(self, "S_w", S)
        object.__setattr__(self, "R_w", R)

    @property
    def horizon(self) -> int:
        return self.Q_w.shape[0]

    def stacked(self) -> np.ndarray:
        return np.block([[self.Q_w, self.S_w], [self.S_w.T, self.R_w]])


def energy_bound(sigma: float, N: int, n: int) -> NoiseBound:
    """Bound W W^T <= N sigma^2 I for per-sample noise ||w(k)||_2 <= sigma."""
    if sigma <= 0:
        raise DataError("sigma must be positive")
    if N < 1:
        raise DataError("N must be at least 1")
    return NoiseBound(-np.eye(N), np.zeros((N, n)), N * sigma**2 * np.eye(n))


def instrumental_bound(R_instr, R_w, N: int) -> NoiseBound:
    """Sample cross-covariance bound with Q_w = -(1/N) R_-^T R_-.

    Accepted only when that Gram matrix is strictly negative definite;
    rank-deficient instruments are rejected rather than approximated.
    """
    R_instr = mc.as_matrix(R_instr)
    Q_w = -(1.0 / N) * (R_instr.T @ R_instr)
    if mc.definiteness(Q_w) is not Definiteness.ND:
        raise NotStrictlyBoundedError(
            "instrumental Gram matrix is not strictly positive definite"
        )
    R_w = mc.symmetrize(R_w)
    return NoiseBound(Q_w, np.zeros((Q_w.shape[0], R_w.shape[0])), R_w)


def _psd(M, tol=QMI_TOL) -> bool:
    M = mc.symmetrize(M)
    if M.shape[0] == 0:
        return True
    eigs = np.linalg.eigvalsh(M)
    return eigs.min() >= -tol * (1.0 + abs(eigs).max())


def noise_membership(W, bound: NoiseBound) -> bool:
    W = mc.as_matrix(W)
    if W.shape[1] != bound.horizon or W.shape[0] != bound.R_w.shape[0]:
        raise DataError(f"noise shape {W.shape} does not match the bound")
    value = W @ bound.Q_w @ W.T + W @ bound.S_w + bound.S_w.T @ W.T + bound.R_w
    return _psd(value)


class QmiKind(enum.Enum):
    PRIMAL_LUMPED = "primal-lumped"
    DUAL_LUMPED = "dual-lumped"
    PRIMAL_STRUCTURED = "primal-structured"
    DUAL_STRUCTURED = "dual-structured"

    @property
    def is_dual(self) -> bool:
        return self in (QmiKind.DUAL_LUMPED, QmiKind.DUAL_STRUCTURED)

    @property
    def is_structured(self) -> bool:
        return self in (QmiKind.PRIMAL_STRUCTURED, QmiKind.DUAL_STRUCTURED)


@dataclass(frozen=True)
class QmiSet:
    """One (Q, S, R) quadratic-matrix-inequality description of a system set.

    Stored matrices are the raw ones divided by `scale`; membership and
    every LMI built from them are invariant under that positive scaling.
    """

    kind: QmiKind
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    n: int
    m: int
    neighbor_dims: tuple = ()
    vertex: int | None = None
    scale: float = 1.0

    @property
    def a(self) -> int:
        return sum(self.neighbor_dims)

    @property
    def top_dim(self) -> int:
        return self.Q.shape[0]

    def stacked(self) -> np.ndarray:
        return np.block([[self.Q, self.S], [self.S.T, self.R]])

    def raw_stacked(self) -> np.ndarray:
        return self.scale * self.stacked()


def _build_primal(stack: np.ndarray, bound: NoiseBound, top: int, kind: QmiKind,
                  n: int, m: int, neighbor_dims=(), vertex=None) -> QmiSet:
    full = stack @ bound.stacked() @ stack.T
    full = 0.5 * (full + full.T)
    scale = max(np.abs(full).max(), 1e-300)
    full = full / scale
    return QmiSet(
        kind,
        full[:top, :top],
        full[:top, top:],
        full[top:, top:],
        n, m, tuple(neighbor_dims), vertex, scale,
    )


def primal_qmi_lumped(data: TrajectoryData, bound: NoiseBound,
                      rank_tol: float = mc.DEFAULT_RANK_TOL) -> QmiSet:
    """Set of (A, B) consistent with the data, as a data-built QMI."""
    n, m, N = data.n, data.m, data.N
    if bound.horizon != N or bound.R_w.shape[0] != n:
        raise DataError("noise bound dimensions do not match the data")
    regressor = np.vstack([data.X_minus, data.U_minus])
    if mc.numerical_rank(regressor, rank_tol) < n + m:
        raise NotInformativeError("stacked [X-; U-] does not have full row rank")
    stack = np.block([
        [data.X_minus, np.zeros((n, n))],
        [data.U_minus, np.zeros((m, n))],
        [data.X_plus, np.eye(n)],
    ])
    return _build_primal(stack, bound, n + m, QmiKind.PRIMAL_LUMPED, n, m)


def primal_qmi_structured(data: SubsystemData, bound: NoiseBound,
                          rank_tol: float = mc.DEFAULT_RANK_TOL) -> QmiSet:
    """Set of (A_i, A_Ni, B_i) consistent with local plus neighbor data."""
    own = data.own
    n, m, N, a = own.n, own.m, own.N, data.a
    if bound.horizon != N or bound.R_w.shape[0] != n:
        raise DataError("noise bound dimensions do not match the data")
    regressor = np.vstack([own.X_minus, data.X_N_minus, own.U_minus])
    if mc.numerical_rank(regressor, rank_tol) < n + a + m:
        raise NotInformativeError(
            "stacked [X_i-; X_N-; U_i-] does not have full row rank"
        )
    stack = np.block([
        [own.X_minus, np.zeros((n, n))],
        [data.X_N_minus, np.zeros((a, n))],
        [own.U_minus, np.zeros((m, n))],
        [own.X_plus, np.eye(n)],
    ])
    return _build_primal(
        stack, bound, n + a + m, QmiKind.PRIMAL_STRUCTURED, n, m,
        data.neighbor_dims, None,
    )


def dual_qmi(primal: QmiSet, cond_limit: float = mc.DEFAULT_COND_LIMIT) -> QmiSet:
    """Blockwise inverse of the primal description (same partition sizes).

    Requires the stacked primal matrix to be invertible; the resulting R
    block must come out positive definite, anything else means the noise
    bound or data violate the dual parameterization's preconditions.
    """
    if primal.kind.is_dual:
        raise DataError("dual_qmi expects a primal QmiSet")
    top = primal.top_dim
    inv = mc.sym_inverse(primal.stacked(), cond_limit)  # scale-invariant condition
    scale = max(np.abs(inv).max(), 1e-300)
    inv = inv / scale
    kind = (
        QmiKind.DUAL_STRUCTURED
        if primal.kind is QmiKind.PRIMAL_STRUCTURED
        else QmiKind.DUAL_LUMPED
    )
    out = QmiSet(
        kind,
        inv[:top, :top],
        inv[:top, top:],
        inv[top:, top:],
        primal.n, primal.m, primal.neighbor_dims, primal.vertex,
        scale / primal.scale,
    )
    if mc.definiteness(out.R) is not Definiteness.PD:
        raise DualityViolationError("dual R block is not positive definite")
    return out


dual_qmi_structured = dual_qmi


def membership_primal(A, B, q: QmiSet) -> bool:
    """(A, B) in the set, primal form: outer factor [-A^T; -B^T; I]."""
    if q.kind is not QmiKind.PRIMAL_LUMPED:
        raise DataError("membership_primal expects a lumped primal QmiSet")
    A = mc.as_matrix(A)
    B = mc.as_matrix(B)
    outer = np.vstack([-A.T, -B.T, np.eye(q.n)])
    return _psd(outer.T @ q.stacked() @ outer)


def membership_dual(A, B, q: QmiSet) -> bool:
    """(A, B) in the set, dual form: outer [[I,0],[0,I],[A,B]], sense <= 0."""
    if q.kind is not QmiKind.DUAL_LUMPED:
        raise DataError("membership_dual expects a lumped dual QmiSet")
    A = mc.as_matrix(A)
    B = mc.as_matrix(B)
    outer = np.block([
        [np.eye(q.n), np.zeros((q.n, q.m))],
        [np.zeros((q.m, q.n)), np.eye(q.m)],
        [A, B],
    ])
    return _psd(-(outer.T @ q.stacked() @ outer))


def membership_primal_structured(A_i, A_N, B_i, q: QmiSet) -> bool:
    if q.kind is not QmiKind.PRIMAL_STRUCTURED:
        raise DataError("expected a structured primal QmiSet")
    A_i = mc.as_matrix(A_i)
    A_N = np.zeros((q.n, 0)) if A_N is None else mc.as_matrix(A_N)
    B_i = mc.as_matrix(B_i)
    outer = np.vstack([-A_i.T, -A_N.T, -B_i.T, np.eye(q.n)])
    return _psd(outer.T @ q.stacked() @ outer)


def membership_dual_structured(A_i, A_N, B_i, q: QmiSet) -> bool:
    if q.kind is not QmiKind.DUAL_STRUCTURED:
        raise DataError("expected a structured dual QmiSet")
    A_i = mc.as_matrix(A_i)
    A_N = np.zeros((q.n, 0)) if A_N is None else mc.as_matrix(A_N)
    B_i = mc.as_matrix(B_i)
    k = q.n + q.a + q.m
    outer = np.vstack([np.eye(k), np.hstack([A_i, A_N, B_i])])
    return _psd(-(outer.T @ q.stacked() @ outer))


# ---------------------------------------------------------------------------
# trajectory CSV / manifest import-export
# ---------------------------------------------------------------------------


def save_trajectories(directory, subsystems, edges, bound_kind: str,
                      sigma: float, N: int, seed=None, prefix="subsystem",
                      noise_model: str = "ball"):
    """One CSV per subsystem (header t, x_1.., u_1..; inputs blank on the
    final row) plus a JSON manifest naming files, edges, and bound data."""
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, traj in enumerate(subsystems):
        name = f"{prefix}_{i}.csv"
        with open(directory / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t"] + [f"x_{k+1}" for k in range(traj.n)] + [f"u_{k+1}" for k in range(traj.m)]
            )
            for t in range(traj.N + 1):
                row = [t] + [f"{v:.17g}" for v in traj.X[:, t]]
                if t < traj.N:
                    row += [f"{v:.17g}" for v in traj.U_minus[:, t]]
                else:
                    row += [""] * traj.m
                writer.writerow(row)
        entries.append({"vertex": i, "file": name, "states": traj.n, "inputs": traj.m})
    manifest = {
        "subsystems": entries,
        "edges": [[int(i), int(j)] for i, j in edges],
        "noise_bound": {"kind": bound_kind, "sigma": sigma, "N": N,
                        "model": noise_model},
    }
    if seed is not None:
        manifest["seed"] = int(seed)
    path = directory / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _read_trajectory_csv(path, n, m) -> TrajectoryData:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != 1 + n + m:
            raise DataError(f"{path}: expected {1 + n + m} columns, got {len(header)}")
        xs, us = [], []
        for row in reader:
            if not row:
                continue
            xs.append([float(v) for v in row[1 : 1 + n]])
            tail = row[1 + n :]
            if any(v != "" for v in tail):
                us.append([float(v) for v in tail])
    if not xs:
        raise DataError(f"{path}: no samples")
    X = np.array(xs).T
    U = np.array(us).T if us else np.zeros((m, 0))
    return TrajectoryData(X, U)


def load_manifest(path):
    """Returns (subsystem data list, per-vertex NoiseBound list, edges, manifest)."""
    path = pathlib.Path(path)
    with open(path) as fh:
        manifest = json.load(fh)
    base = path.parent
    entries = sorted(manifest["subsystems"], key=lambda e: e["vertex"])
    trajs = [
        _read_trajectory_csv(base / e["file"], e["states"], e["inputs"])
        for e in entries
    ]
    edges = [tuple(e) for e in manifest["edges"]]
    L = len(entries)
    nbrs = {i: sorted({j for a, b in edges for j in (a, b) if i in (a, b) and j != i})
            for i in range(L)}
    subsystems = []
    for i, traj in enumerate(trajs):
        ids = tuple(nbrs[i])
        stack = (
            np.vstack([trajs[j].X_minus for j in ids]) if ids
            else np.zeros((0, traj.N))
        )
        subsystems.append(
            SubsystemData(traj, stack, ids, tuple(trajs[j].n for j in ids))
        )
    nb = manifest["noise_bound"]
    if nb["kind"] == "energy":
        model = nb.get("model", "ball")
        radius = lambda n: nb["sigma"] * (np.sqrt(n) if model == "interval" else 1.0)
        bounds = [energy_bound(radius(t.n), nb["N"], t.n) for t in trajs]
    elif nb["kind"] == "instrumental":
        raise DataError(
            "instrumental manifests must carry explicit matrices; rebuild via instrumental_bound"
        )
    else:
        raise DataError(f"unknown noise bound kind {nb['kind']!r}")
    return subsystems, bounds, edges, manifest
