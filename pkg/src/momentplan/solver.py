"""Sequential quadratic programming on the reduced (controls-only) problem.

Moments are eliminated by exact forward propagation, so the transcription
equalities hold to rounding at every iterate and only the VP inequalities
and control bounds remain.  Each major iteration solves an elastic QP (l1
slack on the linearized inequalities) inside a box trust region, then
backtracks on the l1 exact-penalty merit.  The Hessian is a damped BFGS
approximation of the Lagrangian.
"""
from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass
class SolverOptions:
    eq_tol: float = 1e-6
    ineq_tol: float = 1e-6
    opt_tol: float = 1e-6
    max_iter: int = 500
    restarts: int = 0
    seed: int = 0
    restart_scale: float = 0.3
    workers: int = 1
    penalty: float = 10.0
    trust_radius: float = 1.0
    stall_iters: int = 40


@dataclass
class SolveResult:
    status: Status
    controls: np.ndarray
    moments: list
    z: np.ndarray
    objective: float
    iterations: int
    eq_violation: float
    ineq_violation: float
    message: str = ""
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == Status.CONVERGED


def _qp(B, df, g, Jg, sc, rho, lo, hi, tr):
    """Elastic QP; returns step, slacks and constraint multipliers (unscaled)."""
    from cvxopt import matrix, solvers

    n = len(df)
    m = len(g)
    N = n + m
    P = np.zeros((N, N))
    P[:n, :n] = B
    P[n:, n:] = 1e-9 * np.eye(m)
    q = np.concatenate([df, rho * np.ones(m)])
    G_rows, h_rows = [], []
    if m:
        G1 = np.zeros((m, N))
        G1[:, :n] = -sc[:, None] * Jg
        G1[:, n:] = -np.eye(m)
        G_rows.append(G1)
        h_rows.append(sc * g)
        G2 = np.zeros((m, N))
        G2[:, n:] = -np.eye(m)
        G_rows.append(G2)
        h_rows.append(np.zeros(m))
    up = np.minimum(hi, tr)
    dn = np.minimum(-lo, tr)
    G3 = np.zeros((2 * n, N))
    G3[:n, :n] = np.eye(n)
    G3[n:, :n] = -np.eye(n)
    G_rows.append(G3)
    h_rows.append(np.concatenate([up, dn]))
    G = np.vstack(G_rows)
    h = np.concatenate(h_rows)
    solvers.options.update({"show_progress": False, "abstol": 1e-12, "reltol": 1e-11, "feastol": 1e-12,
                            "maxiters": 200})
    sol = solvers.qp(matrix(P), matrix(q), matrix(G), matrix(h))
    x = np.array(sol["x"]).ravel()
    zdual = np.array(sol["z"]).ravel()
    d = x[:n]
    s = x[n:]
    lam = zdual[:m] * sc if m else np.zeros(0)
    return d, np.maximum(s, 0.0), lam, sol["status"]


def _violation(g):
    return float(np.max(np.maximum(-g, 0.0), initial=0.0))


def _merit(f, g, sc, rho):
    return f + rho * float(np.sum(sc * np.maximum(-g, 0.0)))


def sqp(problem, u0, opts: SolverOptions | None = None) -> SolveResult:
    opts = opts or SolverOptions()
    lo, hi = problem.lower, problem.upper
    u = np.clip(np.asarray(u0, dtype=float).ravel(), lo, hi)
    n = len(u)
    f, df, g, Jg, z = problem.reduced(u)
    rownorm = np.max(np.abs(Jg), axis=1, initial=0.0) if len(g) else np.zeros(0)
    sc = np.minimum(1.0, 100.0 / np.maximum(rownorm, 1e-300))
    B = np.eye(n)
    rho = opts.penalty
    tr = opts.trust_radius
    history = []
    best_viol = _violation(g)
    stall = 0
    status, message = Status.MAX_ITER, "iteration limit reached"
    it = 0
    for it in range(1, opts.max_iter + 1):
        viol = _violation(g)
        try:
            d, s, lam, qstat = _qp(B, df, g, Jg, sc, rho, lo - u, hi - u, tr)
        except (ValueError, ArithmeticError) as exc:
            B = np.eye(n)
            tr *= 0.5
            log.debug("QP failure (%s); resetting Hessian", exc)
            if tr < 1e-12:
                status, message = (Status.INFEASIBLE if viol > opts.ineq_tol else Status.MAX_ITER), f"QP failed: {exc}"
                break
            continue
        dnorm = float(np.max(np.abs(d), initial=0.0))
        lin_dec = float(df @ d)
        # stationarity: step vanishes (QP optimum at the current point) or no first-order decrease left
        if viol <= opts.ineq_tol and float(np.sum(s)) <= opts.ineq_tol and (
            dnorm <= 1e-9 * (1 + np.max(np.abs(u), initial=0.0)) or (abs(lin_dec) <= opts.opt_tol * (1 + abs(f)) and dnorm < 0.5 * tr)
        ):
            status, message = Status.CONVERGED, "first-order conditions met"
            history.append({"iter": it, "objective": f, "violation": viol, "merit": _merit(f, g, sc, rho), "step": dnorm})
            break
        slack = float(np.sum(s))
        cur_inf = float(np.sum(sc * np.maximum(-g, 0.0)))
        rho_max = 1e6 * max(1.0, abs(f), float(np.max(np.abs(df), initial=0.0)))
        if slack <= opts.ineq_tol:
            lam_max = float(np.max(np.abs(lam / np.maximum(sc, 1e-300)), initial=0.0)) if len(lam) else 0.0
            if rho < 1.1 * lam_max:
                rho = min(max(2.0 * lam_max, 1.5 * rho), rho_max)
        elif slack > 0.9 * cur_inf and rho < rho_max:
            # linearization cannot remove the violation: weigh feasibility more
            rho = min(10.0 * rho, rho_max)
        lam = np.clip(lam, -rho * sc, rho * sc)
        phi0 = _merit(f, g, sc, rho)
        lin = sc * (g + Jg @ d) if len(g) else np.zeros(0)
        model = f + lin_dec + 0.5 * float(d @ B @ d) + rho * float(np.sum(np.maximum(-lin, 0.0)))
        pred = phi0 - model
        if pred <= 0:
            pred = abs(lin_dec) + 1e-16
        alpha = 1.0
        accepted = False
        for _ in range(30):
            un = np.clip(u + alpha * d, lo, hi)
            fn, dfn, gn, Jgn, zn = problem.reduced(un)
            phin = _merit(fn, gn, sc, rho)
            if np.isfinite(phin) and phin <= phi0 - 1e-4 * alpha * pred:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            B = np.eye(n)
            tr = 0.25 * min(tr, max(dnorm, 1e-12))
            if tr < 1e-10:
                if viol > opts.ineq_tol:
                    status, message = Status.INFEASIBLE, "line search stalled with constraints violated"
                else:
                    status, message = Status.CONVERGED, "no further merit decrease possible at a feasible point"
                break
            continue
        # damped BFGS on the Lagrangian gradient
        step = un - u
        gl_old = df - (Jg.T @ lam if len(lam) else 0.0)
        gl_new = dfn - (Jgn.T @ lam if len(lam) else 0.0)
        y = gl_new - gl_old
        sBs = float(step @ B @ step)
        sy = float(step @ y)
        if sBs > 1e-300:
            theta = 1.0 if sy >= 0.2 * sBs else 0.8 * sBs / (sBs - sy)
            r = theta * y + (1 - theta) * (B @ step)
            Bs = B @ step
            B = B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / float(step @ r)
            B = 0.5 * (B + B.T)
            if not np.all(np.isfinite(B)) or np.linalg.cond(B) > 1e12:
                B = np.eye(n)
        if alpha == 1.0 and dnorm >= 0.99 * tr:
            tr = min(2.0 * tr, 1e3)
        elif alpha < 1.0:
            tr = max(alpha * dnorm, 1e-8)
        u, f, df, g, Jg, z = un, fn, dfn, gn, Jgn, zn
        vnew = _violation(g)
        history.append({"iter": it, "objective": f, "violation": vnew, "merit": phin, "step": alpha * dnorm})
        if vnew < 0.99 * best_viol or vnew <= opts.ineq_tol:
            best_viol = min(best_viol, vnew)
            stall = 0
        else:
            stall += 1
            if stall >= opts.stall_iters and slack > opts.ineq_tol:
                status, message = Status.INFEASIBLE, "constraint violation stagnated"
                break
    eqv = float(np.max(np.abs(problem.eq(z)), initial=0.0))
    inv = _violation(problem.ineq(z))
    if status == Status.CONVERGED and (eqv > opts.eq_tol or inv > opts.ineq_tol):
        status, message = Status.INFEASIBLE, "final point violates tolerances"
    return SolveResult(
        status=status,
        controls=problem.controls_of(z).copy(),
        moments=problem.moment_trajectory(z),
        z=z,
        objective=float(problem.objective(z)),
        iterations=it,
        eq_violation=eqv,
        ineq_violation=inv,
        message=message,
        history=history,
    )


_RANK = {Status.CONVERGED: 0, Status.MAX_ITER: 1, Status.INFEASIBLE: 2}


def solve(problem, opts: SolverOptions | None = None, u0=None) -> SolveResult:
    """Local solve from the default (or given) start plus optional perturbed restarts."""
    opts = opts or SolverOptions()
    base = problem.initial_guess() if u0 is None else np.asarray(u0, dtype=float).ravel()
    starts = [base]
    rng = np.random.default_rng(opts.seed)
    for _ in range(opts.restarts):
        starts.append(base + opts.restart_scale * rng.standard_normal(base.shape) * (1.0 + np.abs(base)))
    if opts.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(opts.workers) as ex:
            results = list(ex.map(lambda s: sqp(problem, s, opts), starts))
    else:
        results = [sqp(problem, s, opts) for s in starts]
    return min(results, key=lambda r: (_RANK[r.status], r.ineq_violation if r.status != Status.CONVERGED else 0.0,
                                       r.objective))
