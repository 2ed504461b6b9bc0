"""Dense primal-dual interior-point SDP solver and a gamma bisection driver.

Solves the lowered standard form

    minimize c^T y   s.t.   F0_b + sum_k y_k Fk_b >= 0  for every block b

with a Nesterov-Todd scaled predictor-corrector method.  Feasibility
questions (no objective) run through a slack phase, minimize lam s.t.
F_b(y) + lam*I >= 0, which always has a strictly feasible start; it exits
early as soon as the y-part replays strictly feasible, and it reports
infeasibility only when a separating certificate X (trace one, annihilating
every Fk, with <F0, X> decisively negative) has been found.  Stalls are
Inconclusive, never Infeasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import lmi as lmi_mod
from .lmi import LmiProblem, LoweredSdp, lower_to_sdp


class SolverError(RuntimeError):
    pass


class NoFeasiblePointError(SolverError):
    pass


class MonotonicityViolationError(SolverError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 200
    gap_tol: float = 1e-8
    infeas_ratio: float = 1e-4   # certificate residual must be this much smaller than the violation
    centering: float = 0.3       # fallback/cap for the centering parameter
    step_frac: float = 0.97
    replay_tol: float = 1e-6

    def __post_init__(self):
        if min(self.gap_tol, self.infeas_ratio, self.centering, self.step_frac) <= 0:
            raise ValueError("solver tolerances must be positive")


class SolveStatus:
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    INCONCLUSIVE = "inconclusive"


@dataclass
class SolveOutcome:
    status: str
    assignment: dict | None = None
    objective: float | None = None
    iterations: int = 0
    gap: float = math.nan
    diagnostics: list = field(default_factory=list)
    certificate: list | None = None   # per-block X matrices for infeasibility

    @property
    def succeeded(self) -> bool:
        return self.status in (SolveStatus.OPTIMAL, SolveStatus.FEASIBLE)


# ---------------------------------------------------------------------------
# core interior-point iteration on block data
# ---------------------------------------------------------------------------


class _BlockProblem:
    """min c^T y s.t. F0_b + sum_k y_k Fk_b >= 0, dense per-block storage."""

    def __init__(self, consts, coeff_stacks, var_indices, c):
        self.consts = consts
        self.coeffs = coeff_stacks          # list of (n_loc, d, d)
        self.idx = var_indices              # list of int arrays
        self.c = np.asarray(c, dtype=float)
        self.n = self.c.size
        self.total_dim = sum(C.shape[0] for C in consts)

    @staticmethod
    def from_lowered(lowered: LoweredSdp):
        return _BlockProblem(
            [b.const for b in lowered.blocks],
            [b.coeffs for b in lowered.blocks],
            [b.var_index for b in lowered.blocks],
            lowered.c,
        )

    def with_slack(self):
        """Append slack variable lam: blocks become F_b(y) + lam*I, objective lam."""
        consts = list(self.consts)
        coeffs = []
        idx = []
        for C, A, ix in zip(self.consts, self.coeffs, self.idx):
            d = C.shape[0]
            eye = np.eye(d)[None, :, :]
            coeffs.append(np.concatenate([A, eye], axis=0) if A.size else eye.copy())
            idx.append(np.concatenate([ix, [self.n]]).astype(int))
        c = np.zeros(self.n + 1)
        c[self.n] = 1.0
        return _BlockProblem(consts, coeffs, idx, c)

    def eval_blocks(self, y):
        out = []
        for C, A, ix in zip(self.consts, self.coeffs, self.idx):
            F = C.copy()
            if len(ix):
                F += np.einsum("k,kij->ij", y[ix], A)
            out.append(F)
        return out

    def min_eig(self, y) -> float:
        vals = [np.linalg.eigvalsh(F).min() if F.size else np.inf
                for F in self.eval_blocks(y)]
        return float(min(vals)) if vals else np.inf


def _chol_with_jitter(H):
    jitter = 0.0
    scale = max(np.trace(H) / max(H.shape[0], 1), 1e-300)
    for attempt in range(8):
        try:
            return np.linalg.cholesky(H + jitter * np.eye(H.shape[0]))
        except np.linalg.LinAlgError:
            jitter = scale * (1e-14 * 10 ** attempt) if jitter == 0.0 else jitter * 10
    return None


def _max_step(M, dM):
    """Largest a with M + a*dM >= 0, for M > 0 (Cholesky-based)."""
    if M.size == 0:
        return np.inf
    try:
        Lc = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return 0.0
    Y = np.linalg.solve(Lc, dM)
    Y = np.linalg.solve(Lc, Y.T)
    lam = np.linalg.eigvalsh(0.5 * (Y + Y.T)).min()
    if lam >= 0:
        return np.inf
    return 1.0 / abs(lam)


class _IpState:
    def __init__(self, prob: _BlockProblem):
        self.prob = prob
        self.y = np.zeros(prob.n)
        self.X = [np.eye(C.shape[0]) for C in prob.consts]
        self.Z = [np.eye(C.shape[0]) for C in prob.consts]

    def mu(self):
        tot = sum(np.sum(Xb * Zb) for Xb, Zb in zip(self.X, self.Z))
        return tot / max(self.prob.total_dim, 1)


def _ip_iterate(prob: _BlockProblem, opts: SolveOptions, callback=None):
    """Predictor-corrector loop.  Internal convention:

        dual:   max b^T y, Z_b = C_b - sum y_k A_kb >= 0,  b = -c, A = -F, C = F0
        primal: min <C, X>, <A_k, X> = b_k, X >= 0.

    Returns (state, info dict)."""
    st = _IpState(prob)
    n = prob.n
    b = -prob.c
    consts = prob.consts
    nblk = len(consts)
    info = {"iterations": 0, "converged": False, "reason": "", "gap": math.nan}
    if n == 0 or nblk == 0:
        info["converged"] = True
        info["reason"] = "empty problem"
        return st, info

    stalls = 0
    mu_trace = []
    for it in range(opts.max_iterations):
        info["iterations"] = it + 1
        # residuals
        rp = b.copy()
        for Xb, A, ix in zip(st.X, prob.coeffs, prob.idx):
            if len(ix):
                rp[ix] -= np.einsum("kij,ij->k", -A, Xb)
        Rd = []
        for Cb, Zb, A, ix in zip(consts, st.Z, prob.coeffs, prob.idx):
            R = Cb - Zb
            if len(ix):
                R += np.einsum("k,kij->ij", st.y[ix], A)  # C - Z - sum y(-A)
            Rd.append(R)
        mu = st.mu()
        pobj = sum(np.sum(Cb * Xb) for Cb, Xb in zip(consts, st.X))
        dobj = float(b @ st.y)
        relgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        rp_rel = np.abs(rp).max(initial=0.0) / (1 + np.abs(b).max(initial=0.0))
        rd_rel = max(np.abs(R).max(initial=0.0) for R in Rd) / (
            1 + max(np.abs(Cb).max(initial=0.0) for Cb in consts)
        )
        info["gap"] = relgap
        info["pobj"], info["dobj"] = pobj, dobj
        info["rp"], info["rd"] = rp_rel, rd_rel
        if callback is not None and callback(st, info):
            info["reason"] = "callback stop"
            return st, info
        if relgap <= opts.gap_tol and rp_rel <= opts.gap_tol * 100 and rd_rel <= opts.gap_tol * 100:
            info["converged"] = True
            info["reason"] = "converged"
            return st, info
        mu_trace.append(max(mu, 1e-300))
        if (
            len(mu_trace) > 40
            and relgap > 1e-4
            and mu_trace[-1] > 0.9 * mu_trace[-41]
            and rp_rel <= 1e-6 and rd_rel <= 1e-6
        ):
            info["reason"] = "no centering progress"
            return st, info

        # NT scaling per block
        Ws = []
        Zinvs = []
        ok = True
        for Xb, Zb in zip(st.X, st.Z):
            try:
                Lx = np.linalg.cholesky(Xb)
                Lz = np.linalg.cholesky(Zb)
            except np.linalg.LinAlgError:
                ok = False
                break
            U, s, Vt = np.linalg.svd(Lz.T @ Lx)
            R = Lx @ Vt.T / np.sqrt(s)
            Ws.append(R @ R.T)
            Zinvs.append(np.linalg.solve(Lz.T, np.linalg.solve(Lz, np.eye(Zb.shape[0]))))
        if not ok:
            info["reason"] = "iterate lost definiteness"
            return st, info

        # Schur complement H[k,l] = sum_b <A_k, W A_l W>  (A = -F, sign cancels)
        H = np.zeros((n, n))
        WAW = []
        for A, ix, W in zip(prob.coeffs, prob.idx, Ws):
            if not len(ix):
                WAW.append(None)
                continue
            M = np.einsum("ij,kjl,lm->kim", W, A, W)
            WAW.append(M)
            H[np.ix_(ix, ix)] += np.einsum("kij,lij->kl", A, M)
        L = _chol_with_jitter(H)
        if L is None:
            info["reason"] = "singular schur complement"
            return st, info

        def solve_for(sigma_mu):
            rhs = rp.copy()
            for Cb, A, ix, Xb, Zi, W, R in zip(
                consts, prob.coeffs, prob.idx, st.X, Zinvs, Ws, Rd
            ):
                if not len(ix):
                    continue
                RHSc = sigma_mu * Zi - Xb
                rhs[ix] -= np.einsum("kij,ij->k", -A, RHSc)
                rhs[ix] += np.einsum("kij,ij->k", -A, W @ R @ W)
            dy = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
            dZ = []
            dX = []
            for Cb, A, ix, Xb, Zi, W, R in zip(
                consts, prob.coeffs, prob.idx, st.X, Zinvs, Ws, Rd
            ):
                dZb = R.copy()
                if len(ix):
                    dZb -= np.einsum("k,kij->ij", dy[ix], -A)
                RHSc = sigma_mu * Zi - Xb
                dXb = RHSc - W @ dZb @ W
                dX.append(0.5 * (dXb + dXb.T))
                dZ.append(0.5 * (dZb + dZb.T))
            return dy, dX, dZ

        # predictor
        dy_a, dX_a, dZ_a = solve_for(0.0)
        ap = min(1.0, min(_max_step(Xb, dXb) for Xb, dXb in zip(st.X, dX_a)))
        ad = min(1.0, min(_max_step(Zb, dZb) for Zb, dZb in zip(st.Z, dZ_a)))
        mu_aff = sum(
            np.sum((Xb + ap * dXb) * (Zb + ad * dZb))
            for Xb, dXb, Zb, dZb in zip(st.X, dX_a, st.Z, dZ_a)
        ) / max(prob.total_dim, 1)
        sigma = min(max((mu_aff / mu) ** 3, 1e-8), 1.0) if mu > 0 else opts.centering

        # corrector
        dy, dX, dZ = solve_for(sigma * mu)
        tau = opts.step_frac if mu > 1e-8 else 0.99
        ap = tau * min(1.0, min(_max_step(Xb, dXb) for Xb, dXb in zip(st.X, dX)))
        ad = tau * min(1.0, min(_max_step(Zb, dZb) for Zb, dZb in zip(st.Z, dZ)))
        if ap < 1e-10 and ad < 1e-10:
            stalls += 1
            if stalls >= 3:
                info["reason"] = "stalled"
                return st, info
        else:
            stalls = 0
        st.y = st.y + ad * dy
        st.X = [Xb + ap * dXb for Xb, dXb in zip(st.X, dX)]
        st.Z = [Zb + ad * dZb for Zb, dZb in zip(st.Z, dZ)]
        if st.mu() < 1e-18:
            info["reason"] = "mu underflow"
            return st, info

    info["reason"] = "iteration cap"
    return st, info


# ---------------------------------------------------------------------------
# outcomes: feasibility phase, optimization, public solve()
# ---------------------------------------------------------------------------


def _verified_outcome(lowered: LoweredSdp, y, status, opts, info, extra=None):
    assignment = lowered.assignment_from_y(y)
    passed, report = lmi_mod.check_feasible_at(lowered.problem, assignment, opts.replay_tol)
    diag = list(extra or [])
    if not passed:
        worst = min((r[1] for r in report), default=0.0)
        diag.append(f"witness replay failed (worst margin {worst:.3e})")
        return SolveOutcome(
            SolveStatus.INCONCLUSIVE,
            None,
            None,
            info.get("iterations", 0),
            info.get("gap", math.nan),
            diag,
        )
    objective = None
    if lowered.problem.objective:
        objective = float(
            sum(
                coef * (np.trace(np.atleast_2d(assignment[name])) if np.ndim(assignment[name]) else assignment[name])
                for name, coef in lowered.problem.objective
            )
        )
    return SolveOutcome(
        status,
        assignment,
        objective,
        info.get("iterations", 0),
        info.get("gap", math.nan),
        diag,
    )


def _residuals(base: _BlockProblem, Xs):
    resid = np.zeros(base.n)
    for Xb, A, ix in zip(Xs, base.coeffs, base.idx):
        if len(ix):
            resid[ix] += np.einsum("kij,ij->k", A, Xb)
    return resid


def _certify_infeasible(base: _BlockProblem, Xs, opts: SolveOptions):
    """Turn an approximate separating direction into a checked certificate.

    The candidate X is projected onto the exact annihilator of the Fk
    (least-norm correction through the Gram matrix), clipped back to PSD,
    and accepted only if the violation <F0, X> stays decisively negative
    against the tiny residuals the clipping reintroduces.  Small absolute
    residuals alone prove nothing: a feasible witness with a large norm
    could cancel the violation."""
    tr = sum(np.trace(Xb) for Xb in Xs)
    if tr <= 0:
        return None
    Xs = [Xb / tr for Xb in Xs]
    resid = _residuals(base, Xs)
    viol = sum(np.sum(Cb * Xb) for Cb, Xb in zip(base.consts, Xs))
    if viol >= 0 or np.abs(resid).max(initial=0.0) > abs(viol) * opts.infeas_ratio:
        return None
    if base.n:
        gram = np.zeros((base.n, base.n))
        for A, ix in zip(base.coeffs, base.idx):
            if len(ix):
                gram[np.ix_(ix, ix)] += np.einsum("kij,lij->kl", A, A)
        lam = np.linalg.lstsq(gram, resid, rcond=None)[0]
        Xs = [Xb.copy() for Xb in Xs]
        for Xb, A, ix in zip(Xs, base.coeffs, base.idx):
            if len(ix):
                Xb -= np.einsum("k,kij->ij", lam[ix], A)
    clipped = []
    for Xb in Xs:
        w, V = np.linalg.eigh(0.5 * (Xb + Xb.T))
        clipped.append((V * np.maximum(w, 0.0)) @ V.T)
    resid = _residuals(base, clipped)
    viol = sum(np.sum(Cb * Xb) for Cb, Xb in zip(base.consts, clipped))
    scale = max(abs(np.trace(Xb)) for Xb in clipped)
    if viol < -1e-9 * max(scale, 1.0) and np.abs(resid).max(initial=0.0) <= abs(viol) * 1e-9:
        return clipped, viol
    return None


def _feasibility_phase(lowered: LoweredSdp, opts: SolveOptions):
    base = _BlockProblem.from_lowered(lowered)
    wrapped = base.with_slack()
    found = {}

    def callback(st, info):
        lam = st.y[base.n]
        if lam < 0:
            yy = st.y[: base.n]
            if base.min_eig(yy) > 0.0:
                found["y"] = yy.copy()
                return True
        if info["iterations"] % 5 == 0 or info.get("gap", 1) < opts.gap_tol:
            cert = _certify_infeasible(base, st.X, opts)
            if cert is not None:
                found["certificate"], found["violation"] = cert
                return True
        return False

    st, info = _ip_iterate(wrapped, opts, callback)
    if "y" in found:
        return _verified_outcome(lowered, found["y"], SolveStatus.FEASIBLE, opts, info)
    if "certificate" in found:
        return SolveOutcome(
            SolveStatus.INFEASIBLE,
            None,
            None,
            info["iterations"],
            info.get("gap", math.nan),
            [f"certified violation {found['violation']:.3e}"],
            found["certificate"],
        )
    lam = st.y[base.n] if wrapped.n else math.inf
    diag = [f"slack phase ended ({info['reason']}), lam={lam:.3e}"]
    if info.get("converged") and lam > 0:
        diag.append("optimal slack positive but no separating certificate extracted")
    return SolveOutcome(
        SolveStatus.INCONCLUSIVE, None, None, info["iterations"],
        info.get("gap", math.nan), diag,
    )


def solve(problem: LmiProblem, opts: SolveOptions | None = None,
          backend: str = "native") -> SolveOutcome:
    """Solve an LMI feasibility or linear-objective problem.

    Feasible/Optimal outcomes always replay through check_feasible_at
    before being reported; anything that cannot be certified one way or
    the other comes back Inconclusive.  `backend` selects an engine from
    BACKENDS; the built-in interior-point method is the default, and any
    adapter must honor the same outcome contract (replayable witnesses,
    certified infeasibility only).
    """
    opts = opts or SolveOptions()
    if backend != "native":
        try:
            engine = BACKENDS[backend]
        except KeyError:
            raise SolverError(f"unknown solver backend {backend!r}") from None
        return engine(problem, opts)
    lowered = lower_to_sdp(problem)
    if lowered.n_scalars > 5000:
        raise SolverError(f"{lowered.n_scalars} scalar variables exceeds the dense-solver guard")
    if not problem.objective:
        return _feasibility_phase(lowered, opts)

    base = _BlockProblem.from_lowered(lowered)
    st, info = _ip_iterate(base, opts)
    if info.get("converged"):
        out = _verified_outcome(lowered, st.y, SolveStatus.OPTIMAL, opts, info)
        if out.succeeded:
            return out
    # did not converge cleanly: classify via the slack phase
    feas = _feasibility_phase(lowered, opts)
    if feas.status == SolveStatus.INFEASIBLE:
        return feas
    if base.min_eig(st.y) > 0.0:
        out = _verified_outcome(
            lowered, st.y, SolveStatus.FEASIBLE, opts, info,
            [f"optimizer did not converge ({info['reason']}); best feasible iterate returned"],
        )
        if out.succeeded:
            return out
    if feas.succeeded:
        return replace(
            feas,
            diagnostics=feas.diagnostics
            + [f"objective phase failed ({info['reason']}); feasible point without optimality"],
        )
    return SolveOutcome(
        SolveStatus.INCONCLUSIVE, None, None, info["iterations"],
        info.get("gap", math.nan),
        [f"optimizer: {info['reason']}"] + feas.diagnostics,
    )


#: Engine registry for cross-validating solver bugs; adapters register here.
BACKENDS: dict = {}


def _cvxopt_backend(problem: LmiProblem, opts: SolveOptions) -> SolveOutcome:
    """Adapter around cvxopt's conic solver, for cross-validation only."""
    import cvxopt
    import cvxopt.solvers

    lowered = lower_to_sdp(problem)
    n = lowered.n_scalars
    c = lowered.c.copy()
    feasibility = not problem.objective
    if feasibility:
        n += 1
        c = np.zeros(n)
        c[-1] = 1.0
    Gs, hs = [], []
    for blk in lowered.blocks:
        G = np.zeros((blk.dim * blk.dim, n))
        for local, gidx in enumerate(blk.var_index):
            G[:, gidx] = -blk.coeffs[local].reshape(-1)
        if feasibility:
            G[:, -1] = -np.eye(blk.dim).reshape(-1)
        Gs.append(cvxopt.matrix(G))
        hs.append(cvxopt.matrix(blk.const))
    opts_saved = dict(cvxopt.solvers.options)
    cvxopt.solvers.options["show_progress"] = False
    try:
        sol = cvxopt.solvers.sdp(cvxopt.matrix(c), Gs=Gs, hs=hs)
    finally:
        cvxopt.solvers.options.clear()
        cvxopt.solvers.options.update(opts_saved)
    status = sol["status"]
    if status != "optimal":
        label = SolveStatus.INFEASIBLE if status == "primal infeasible" else SolveStatus.INCONCLUSIVE
        return SolveOutcome(label, None, None, 0, math.nan, [f"cvxopt status: {status}"])
    y = np.array(sol["x"]).ravel()
    if feasibility:
        lam, y = y[-1], y[:-1]
        if lam >= 0:
            return SolveOutcome(
                SolveStatus.INCONCLUSIVE, None, None, 0, math.nan,
                [f"cvxopt slack {lam:.3e} not negative"],
            )
    out = _verified_outcome(
        lowered, y,
        SolveStatus.FEASIBLE if feasibility else SolveStatus.OPTIMAL,
        opts, {"iterations": sol.get("iterations", 0), "gap": sol.get("gap", math.nan)},
        ["backend: cvxopt"],
    )
    return out


try:  # pragma: no cover - exercised only when cvxopt is installed
    import cvxopt  # noqa: F401

    BACKENDS["cvxopt"] = _cvxopt_backend
except ImportError:  # pragma: no cover
    pass


# ---------------------------------------------------------------------------
# bisection over a scalar parameter
# ---------------------------------------------------------------------------


@dataclass
class BisectResult:
    gamma: float
    witness: SolveOutcome
    evaluations: list
    bracketing_uncertain: bool = False


def bisect_gamma(predicate, lo: float, hi: float, rel_tol: float = 1e-4,
                 max_steps: int = 200) -> BisectResult:
    """Smallest bracketed gamma with predicate(gamma) feasible.

    predicate returns a SolveOutcome (or anything with .status / .succeeded).
    Inconclusive outcomes are treated as infeasible for bracketing but
    flagged, so the certified value stays an upper bound.
    """
    if not (lo < hi):
        raise ValueError("need lo < hi")
    evaluations = []

    def run(g):
        out = predicate(g)
        evaluations.append((g, out.status))
        return out

    top = run(hi)
    if not top.succeeded:
        raise NoFeasiblePointError(f"predicate infeasible at hi={hi}")
    uncertain = False
    best_g, best_out = hi, top
    steps = 0
    while hi - lo > rel_tol * max(1.0, abs(hi)) and steps < max_steps:
        steps += 1
        mid = 0.5 * (lo + hi)
        out = run(mid)
        if out.succeeded:
            hi, best_g, best_out = mid, mid, out
        else:
            if out.status == SolveStatus.INCONCLUSIVE:
                uncertain = True
            lo = mid
    feas_points = [g for g, s in evaluations if s in (SolveStatus.FEASIBLE, SolveStatus.OPTIMAL)]
    infeas_points = [g for g, s in evaluations if s == SolveStatus.INFEASIBLE]
    if feas_points and infeas_points and min(feas_points) < max(infeas_points) - 1e-12:
        raise MonotonicityViolationError(
            f"feasible at {min(feas_points)} but infeasible at {max(infeas_points)}"
        )
    return BisectResult(best_g, best_out, evaluations, uncertain)
