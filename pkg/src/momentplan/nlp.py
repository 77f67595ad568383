"""Deterministic transcription of the chance-constrained planning problem.

Decision vector layout: all controls first (step-major, ``u[t, j]`` at
``t * nu + j``), then the moment blocks ``m(0), ..., m(T)``.  Equalities are
``m(0) - m0`` and ``m(t+1) - A(u_t, t) [1; m(t)]``.  Inequalities (``g >= 0``)
are four VP rows per obstacle per step ``t = 0 .. T-1`` (optionally starting
later, see ``Scenario.obstacle_start``) and four goal rows
at ``T``.  Control bounds are simple variable bounds, kept apart from the
general constraints.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .expr import MtpExpression, Tag, expect_noise
from .propagation import (
    AugmentedBasis,
    ClosureError,
    CompiledTerms,
    DynamicsSpec,
    MomentSystem,
    MomentVector,
    build_augmented_basis,
    build_moment_system,
    initial_moments,
    key_name,
    _layout_index,
    _state_key,
    _other_key,
)
from .risk import GOAL, OBSTACLE, DegreeError, UncertainRegion, expected_poly, vp_goal_constraints, vp_obstacle_constraints


@dataclass
class Scenario:
    name: str
    dynamics: DynamicsSpec
    initial: dict
    obstacles: list
    goal: UncertainRegion | None
    horizon: int
    delta: float
    delta_goal: float
    stage_cost: MtpExpression = field(default_factory=MtpExpression)
    terminal_cost: MtpExpression = field(default_factory=MtpExpression)
    control_bounds: dict = field(default_factory=dict)
    alpha_max: int | None = None
    aux_trig_states: tuple = ()
    initial_controls: np.ndarray | None = None
    options: dict = field(default_factory=dict)
    obstacle_start: int = 0  # first step whose obstacle constraints are imposed

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        if not 0 <= self.obstacle_start <= self.horizon:
            raise ValueError("obstacle_start must lie in [0, horizon]")
        for name, d in (("delta", self.delta), ("delta_goal", self.delta_goal)):
            if not 0 < d <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {d}")
        for r in self.obstacles:
            if r.role != OBSTACLE:
                raise ValueError("obstacles must have role 'obstacle'")
        if self.goal is not None and self.goal.role != GOAL:
            raise ValueError("goal must have role 'goal'")
        names = {s.name for s in self.dynamics.states}
        missing = names - set(self.initial)
        if missing:
            raise ValueError(f"no initial distribution for {sorted(missing)}")
        unknown = set(self.control_bounds) - {c.name for c in self.dynamics.controls}
        if unknown:
            raise ValueError(f"bounds given for unknown controls {sorted(unknown)}")

    @property
    def regions(self) -> list:
        return list(self.obstacles) + ([self.goal] if self.goal is not None else [])

    def region_degree(self) -> int:
        return max((r.state_degree() for r in self.regions), default=1)

    def default_alpha_max(self) -> int:
        return self.alpha_max if self.alpha_max is not None else 2 * self.region_degree()

    def required_basis(self) -> list:
        """State functions the constraints and cost read, as basis seeds."""
        seeds = []
        exprs = [r.polynomial for r in self.regions] + [self.stage_cost, self.terminal_cost]
        for e in exprs:
            for k, _ in e.items():
                for sym, p, c, s in k:
                    if sym.tag != Tag.STATE:
                        continue
                    want = []
                    if p:
                        want.append(((sym, 1, 0, 0),))
                    if c or s:
                        want += [((sym, 0, 1, 0),), ((sym, 0, 0, 1),)]
                    seeds += [w for w in want if w not in seeds]
        if not seeds:
            return None
        return seeds

    def time_value(self, k: int) -> float:
        return k * self.dynamics.dt

    def bounds_arrays(self):
        nu = len(self.dynamics.controls)
        lo = np.full(nu, -np.inf)
        hi = np.full(nu, np.inf)
        for j, c in enumerate(self.dynamics.controls):
            if c.name in self.control_bounds:
                lo[j], hi[j] = self.control_bounds[c.name]
        return np.tile(lo, self.horizon), np.tile(hi, self.horizon)


class _Cost:
    """Expected cost as sum over entries of ``coef(u, t) * m[idx]``."""

    def __init__(self, expr, noises, basis, alpha_max, params, what):
        e = expect_noise(expr, noises)
        groups: dict = {}
        for k, coef in e.items():
            sk, ok = _state_key(k), _other_key(k)
            groups.setdefault(sk, {})
            groups[sk][ok] = groups[sk].get(ok, 0.0) + coef
        index = _layout_index(len(basis), alpha_max)
        exprs, idx = [], []
        for sk, d in groups.items():
            if not sk:
                idx.append(-1)
            else:
                exps = basis.factor(sk)
                if exps is None:
                    raise ClosureError(f"{what} uses {key_name(sk)}, which is not a product of basis functions")
                if sum(exps) > alpha_max:
                    raise DegreeError(f"{what} needs moments of order {sum(exps)} > alpha_max = {alpha_max}")
                idx.append(index[exps])
            exprs.append(MtpExpression(d))
        self.idx = np.array(idx, dtype=np.int64)
        self.n_entries = len(exprs)
        self.compiled = CompiledTerms.build(exprs, params) if exprs else None

    def evaluate(self, pvec, m):
        """Value, gradient w.r.t. params, and (indices, weights) for the moment gradient."""
        if self.compiled is None:
            return 0.0, np.zeros(len(pvec)), self.idx, np.zeros(0)
        vals, grads = self.compiled.evaluate(pvec)
        ev = np.bincount(self.compiled.owner, weights=vals, minlength=self.n_entries)
        eg = np.zeros((self.n_entries, len(pvec)))
        np.add.at(eg, self.compiled.owner, grads)
        mm = np.where(self.idx >= 0, m[np.maximum(self.idx, 0)], 1.0)
        return float(ev @ mm), mm @ eg, self.idx, ev


class NlpProblem:
    """Problem 2 in full space: controls and per-step moment blocks."""

    def __init__(self, scenario: Scenario, alpha_max: int | None = None):
        s = scenario
        self.scenario = s
        self.alpha_max = alpha_max if alpha_max is not None else s.default_alpha_max()
        if self.alpha_max < 2 * s.region_degree():
            raise DegreeError(f"alpha_max {self.alpha_max} is below twice the region degree {s.region_degree()}")
        self.basis: AugmentedBasis = build_augmented_basis(s.dynamics, s.aux_trig_states, s.required_basis())
        self.system: MomentSystem = build_moment_system(s.dynamics, self.basis, self.alpha_max)
        self.T = s.horizon
        self.nu = len(s.dynamics.controls)
        self.n = self.system.size
        self.n_u = self.T * self.nu
        self.n_vars = self.n_u + (self.T + 1) * self.n
        self.m0 = initial_moments(s.initial, self.basis, self.alpha_max).values
        self.obstacle_steps = list(range(s.obstacle_start, self.T))
        self.obstacle_forms = [
            {t: expected_poly(r, self.basis, self.alpha_max, s.time_value(t)) for t in self.obstacle_steps}
            for r in s.obstacles
        ]
        self.goal_form = expected_poly(s.goal, self.basis, self.alpha_max, s.time_value(self.T)) if s.goal else None
        params = self.system.params
        noises = s.dynamics.noises
        self.stage = _Cost(s.stage_cost, noises, self.basis, self.alpha_max, params, "stage cost")
        self.terminal = _Cost(s.terminal_cost, noises, self.basis, self.alpha_max, params, "terminal cost")
        self.n_eq = (self.T + 1) * self.n
        self.n_ineq = 4 * (len(s.obstacles) * len(self.obstacle_steps) + (1 if s.goal else 0))
        self.lower, self.upper = s.bounds_arrays()
        self._sys_cache: dict = {}
        # static sparsity of the inequality Jacobian in moment space
        self._ineq_rows = []
        for i in range(len(s.obstacles)):
            for t in self.obstacle_steps:
                self._ineq_rows.append((t, self.obstacle_forms[i][t], vp_obstacle_constraints, s.delta))
        if self.goal_form is not None:
            self._ineq_rows.append((self.T, self.goal_form, vp_goal_constraints, s.delta_goal))

    # -- layout ---------------------------------------------------------
    def controls_of(self, z) -> np.ndarray:
        return np.asarray(z[: self.n_u]).reshape(self.T, self.nu)

    def moments_of(self, z) -> np.ndarray:
        return np.asarray(z[self.n_u:]).reshape(self.T + 1, self.n)

    def m_slice(self, t: int) -> slice:
        a = self.n_u + t * self.n
        return slice(a, a + self.n)

    def counts(self) -> dict:
        return {
            "variables": self.n_vars,
            "equalities": self.n_eq,
            "inequalities": self.n_ineq,
            "constraints": self.n_eq + self.n_ineq,
            "bounds": int(np.isfinite(self.lower).sum() + np.isfinite(self.upper).sum()),
            "moments_per_step": self.n,
        }

    def initial_guess(self) -> np.ndarray:
        """Bounded midpoints (else zero) unless the scenario supplies controls."""
        s = self.scenario
        if s.initial_controls is not None:
            u = np.broadcast_to(np.asarray(s.initial_controls, dtype=float), (self.T, self.nu)).ravel().copy()
        else:
            u = np.zeros(self.n_u)
            both = np.isfinite(self.lower) & np.isfinite(self.upper)
            u[both] = 0.5 * (self.lower[both] + self.upper[both])
            only_lo = np.isfinite(self.lower) & ~both
            u[only_lo] = np.maximum(0.0, self.lower[only_lo])
            only_hi = np.isfinite(self.upper) & ~both
            u[only_hi] = np.minimum(0.0, self.upper[only_hi])
        return np.clip(u, self.lower, self.upper)

    # -- moment map -------------------------------------------------------
    def step_map(self, u_t, t: int, with_grad: bool = False):
        """``A(u_t, t)`` as a dense stacked matrix, optionally with term data for gradients."""
        key = (t, np.asarray(u_t, dtype=float).tobytes())
        hit = self._sys_cache.get(key)
        if hit is None:
            p = self.system.param_vector(u_t, self.scenario.time_value(t))
            vals, grads = self.system._compiled.evaluate(p)
            M = np.zeros((self.n + 1, self.n + 1))
            np.add.at(M, (self.system.term_rows, self.system.term_cols), vals)
            M[0, 0] = 1.0
            hit = (M, grads)
            if len(self._sys_cache) > 4 * self.T + 8:
                self._sys_cache.clear()
            self._sys_cache[key] = hit
        return hit if with_grad else hit[0]

    def dM_times(self, grads, zvec) -> np.ndarray:
        """``[dA/du_j @ zvec]`` for each control ``j``: shape ``[n, nu]`` (row 0 dropped)."""
        rows = self.system.term_rows
        w = zvec[self.system.term_cols]
        out = np.empty((self.n, self.nu))
        for j in range(self.nu):
            out[:, j] = np.bincount(rows, weights=grads[:, j] * w, minlength=self.n + 1)[1:]
        return out

    def complete(self, u) -> np.ndarray:
        """Full decision vector with moments propagated exactly from ``u``."""
        u = np.asarray(u, dtype=float).reshape(self.T, self.nu)
        z = np.empty(self.n_vars)
        z[: self.n_u] = u.ravel()
        m = self.m0.copy()
        z[self.m_slice(0)] = m
        for t in range(self.T):
            M = self.step_map(u[t], t)
            m = M[1:, 0] + M[1:, 1:] @ m
            z[self.m_slice(t + 1)] = m
        return z

    def moment_trajectory(self, z) -> list[MomentVector]:
        return [MomentVector(self.basis, self.alpha_max, m) for m in self.moments_of(z)]

    # -- objective ----------------------------------------------------------
    def objective(self, z) -> float:
        return self._objective(z, False)[0]

    def objective_grad(self, z) -> np.ndarray:
        return self._objective(z, True)[1]

    def _objective(self, z, grad):
        u = self.controls_of(z)
        ms = self.moments_of(z)
        g = np.zeros(self.n_vars) if grad else None
        total = 0.0
        for t in range(self.T + 1):
            cost = self.stage if t < self.T else self.terminal
            if cost.compiled is None:
                continue
            uu = u[t] if t < self.T else np.zeros(self.nu)
            p = np.concatenate([uu, [self.scenario.time_value(t)]])
            val, gp, idx, w = cost.evaluate(p, ms[t])
            total += val
            if grad:
                if t < self.T:
                    g[t * self.nu:(t + 1) * self.nu] += gp[: self.nu]
                sl = self.m_slice(t)
                keep = idx >= 0
                np.add.at(g[sl], idx[keep], w[keep])
        return total, g

    # -- constraints ------------------------------------------------------
    def eq(self, z) -> np.ndarray:
        u = self.controls_of(z)
        ms = self.moments_of(z)
        r = np.empty(self.n_eq)
        r[: self.n] = ms[0] - self.m0
        for t in range(self.T):
            M = self.step_map(u[t], t)
            r[(t + 1) * self.n:(t + 2) * self.n] = ms[t + 1] - M[1:, 0] - M[1:, 1:] @ ms[t]
        return r

    def eq_jac(self, z) -> sparse.csr_matrix:
        u = self.controls_of(z)
        ms = self.moments_of(z)
        n, nu = self.n, self.nu
        blocks_r, blocks_c, blocks_v = [], [], []

        def put(r0, c0, B):
            B = np.asarray(B)
            rr, cc = np.nonzero(B)
            blocks_r.append(rr + r0)
            blocks_c.append(cc + c0)
            blocks_v.append(B[rr, cc])

        put(0, self.n_u, np.eye(n))
        for t in range(self.T):
            M, grads = self.step_map(u[t], t, True)
            zt = np.concatenate([[1.0], ms[t]])
            r0 = (t + 1) * n
            put(r0, t * nu, -self.dM_times(grads, zt))
            put(r0, self.n_u + t * n, -M[1:, 1:])
            put(r0, self.n_u + (t + 1) * n, np.eye(n))
        return sparse.csr_matrix(
            (np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))),
            shape=(self.n_eq, self.n_vars),
        )

    def _ineq_parts(self, ms):
        vals, rows = [], []
        for t, (ep, ep2), fn, delta in self._ineq_rows:
            a, b = ep(ms[t]), ep2(ms[t])
            g, J = fn(a, b, delta)
            vals.append(g)
            rows.append((t, ep, ep2, J))
        return vals, rows

    def ineq(self, z) -> np.ndarray:
        if not self._ineq_rows:
            return np.zeros(0)
        vals, _ = self._ineq_parts(self.moments_of(z))
        return np.concatenate(vals)

    def ineq_moment_jac(self, t_row, ep, ep2, J) -> np.ndarray:
        """Dense ``[4, n]`` derivative of one VP row group w.r.t. its moment block."""
        return np.outer(J[:, 0], ep.dense(self.n)) + np.outer(J[:, 1], ep2.dense(self.n))

    def ineq_jac(self, z) -> sparse.csr_matrix:
        if not self._ineq_rows:
            return sparse.csr_matrix((0, self.n_vars))
        _, parts = self._ineq_parts(self.moments_of(z))
        rr, cc, vv = [], [], []
        for k, (t, ep, ep2, J) in enumerate(parts):
            D = self.ineq_moment_jac(t, ep, ep2, J)
            r, c = np.nonzero(D)
            rr.append(r + 4 * k)
            cc.append(c + self.n_u + t * self.n)
            vv.append(D[r, c])
        return sparse.csr_matrix(
            (np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))), shape=(self.n_ineq, self.n_vars)
        )

    def gradients(self, z):
        """Objective gradient, equality Jacobian, inequality Jacobian."""
        return self.objective_grad(z), self.eq_jac(z), self.ineq_jac(z)

    # -- reduced space ------------------------------------------------------
    def reduced(self, u):
        """Objective, inequalities and their derivatives with moments eliminated.

        Moments follow ``u`` exactly; sensitivities ``dm(t)/du`` are carried
        forward step by step.
        """
        u = np.asarray(u, dtype=float).reshape(self.T, self.nu)
        z = self.complete(u)
        ms = self.moments_of(z)
        S = np.zeros((self.n, self.n_u))
        sens = [S]
        for t in range(self.T):
            M, grads = self.step_map(u[t], t, True)
            zt = np.concatenate([[1.0], ms[t]])
            S = M[1:, 1:] @ S
            S[:, t * self.nu:(t + 1) * self.nu] += self.dM_times(grads, zt)
            sens.append(S)
        gz = self.objective_grad(z)
        f = self.objective(z)
        df = gz[: self.n_u].copy()
        for t in range(self.T + 1):
            df += gz[self.m_slice(t)] @ sens[t]
        if self._ineq_rows:
            vals, parts = self._ineq_parts(ms)
            g = np.concatenate(vals)
            Jg = np.vstack([self.ineq_moment_jac(t, ep, ep2, J) @ sens[t] for t, ep, ep2, J in parts])
        else:
            g = np.zeros(0)
            Jg = np.zeros((0, self.n_u))
        return f, df, g, Jg, z


def assemble(scenario: Scenario, alpha_max: int | None = None) -> NlpProblem:
    return NlpProblem(scenario, alpha_max)
