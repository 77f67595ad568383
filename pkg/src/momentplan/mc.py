"""Monte Carlo oracle: simulate the original stochastic dynamics under fixed controls.

Samples are processed in fixed-size chunks.  Every random stream is keyed by
``(master seed, kind, chunk, step, symbol index)`` through
``numpy.random.SeedSequence`` with a Philox generator, and chunk results are
combined in chunk order, so reports are bit-identical for any worker count.
"""
from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels, rv
from .expr import TIME
from .propagation import MomentVector, monomial_names, _layout

CHUNK = 65536
REDRAW = "redraw"
PERSISTENT = "persistent"

_INIT, _DYN, _OBS, _GOAL = 0, 1, 2, 3


def _rng(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


@dataclass
class McReport:
    samples: int
    seed: int
    noise_mode: str
    obstacle_names: list
    counts: np.ndarray  # [T + 1, n_obstacles] collision counts
    goal_count: int | None
    basis_names: list
    alpha_max: int
    moment_sums: np.ndarray  # [T + 1, n_moments]
    moment_sumsq: np.ndarray
    dt: float = 1.0
    extra: dict = field(default_factory=dict)

    @property
    def risks(self) -> np.ndarray:
        return self.counts / self.samples

    @property
    def risk_stderr(self) -> np.ndarray:
        p = self.risks
        return np.sqrt(p * (1 - p) / self.samples)

    @property
    def goal_probability(self) -> float | None:
        return None if self.goal_count is None else self.goal_count / self.samples

    @property
    def goal_stderr(self) -> float | None:
        p = self.goal_probability
        return None if p is None else float(np.sqrt(p * (1 - p) / self.samples))

    @property
    def moments(self) -> np.ndarray:
        return self.moment_sums / self.samples

    @property
    def moment_stderr(self) -> np.ndarray:
        n = self.samples
        var = np.maximum(self.moment_sumsq / n - self.moments ** 2, 0.0)
        return np.sqrt(var / max(n - 1, 1))

    def passes(self, delta: float, delta_goal: float, k: float = 3.0, steps=None) -> bool:
        """Risk bounds hold within ``k`` standard errors (obstacles on ``steps``, default 0..T-1)."""
        T = self.counts.shape[0] - 1
        steps = range(T) if steps is None else steps
        for t in steps:
            if np.any(self.risks[t] > delta + k * self.risk_stderr[t]):
                return False
        if self.goal_count is not None and self.goal_probability < 1 - delta_goal - k * self.goal_stderr:
            return False
        return True

    def to_text(self, header: dict | None = None, delta=None, delta_goal=None) -> str:
        out = io.StringIO()
        for k, v in (header or {}).items():
            out.write(f"# {k}: {v}\n")
        out.write(f"samples: {self.samples}\nseed: {self.seed}\nnoise_mode: {self.noise_mode}\n")
        if self.goal_count is not None:
            out.write(f"goal_probability: {self.goal_probability:.6f}\ngoal_stderr: {self.goal_stderr:.6f}\n")
        T = self.counts.shape[0] - 1
        if len(self.obstacle_names):
            worst = float(np.max(self.risks[:T], initial=0.0))
            out.write(f"max_step_risk: {worst:.6f}\n")
        if delta is not None:
            out.write(f"delta: {delta}\ndelta_goal: {delta_goal}\n")
            out.write(f"verdict: {'PASS' if self.passes(delta, delta_goal) else 'FAIL'}\n")
        out.write("\n[risk]\nstep,time,obstacle,risk,stderr\n")
        for t in range(T + 1):
            for i, name in enumerate(self.obstacle_names):
                out.write(f"{t},{t * self.dt:.6g},{name},{self.risks[t, i]:.6f},{self.risk_stderr[t, i]:.6f}\n")
        out.write("\n[moments]\nstep,moment,mean,stderr\n")
        names = monomial_names(_Names(self.basis_names), self.alpha_max)
        m, se = self.moments, self.moment_stderr
        for t in range(T + 1):
            for j, name in enumerate(names):
                out.write(f"{t},{name},{m[t, j]:.10e},{se[t, j]:.3e}\n")
        return out.getvalue()


class _Names:
    """Minimal basis stand-in for ``monomial_names``."""

    def __init__(self, names):
        self.names = tuple(names)

    def __len__(self):
        return len(self.names)


def _chunk(scenario, controls, basis, alpha_max, seed, c, n, noise_mode):
    dyn = scenario.dynamics
    T = scenario.horizon
    state_names = [s.name for s in dyn.states]
    x = {}
    for i, name in enumerate(state_names):
        x[name] = rv.sample(scenario.initial[name], _rng(seed, _INIT, c, 0, i), n)
    noise_syms = list(dyn.noises)
    E = np.array(_layout(len(basis), alpha_max), dtype=np.int64)
    n_obs = len(scenario.obstacles)
    counts = np.zeros((T + 1, n_obs), dtype=np.int64)
    sums = np.zeros((T + 1, len(E)))
    sumsq = np.zeros((T + 1, len(E)))
    persistent = {}

    def region_env(k_obs, r, t):
        env = {}
        for j, (sym, dist) in enumerate(r.noises.items()):
            if noise_mode == PERSISTENT:
                key = (k_obs, j)
                if key not in persistent:
                    persistent[key] = rv.sample(dist, _rng(seed, _OBS, c, 0, k_obs, j), n)
                env[sym.name] = persistent[key]
            else:
                env[sym.name] = rv.sample(dist, _rng(seed, _OBS, c, t, k_obs, j), n)
        return env

    for t in range(T + 1):
        tval = scenario.time_value(t)
        B = basis.values(x)
        s1, s2 = kernels.moment_sums(B, E)
        sums[t], sumsq[t] = s1, s2
        for k, r in enumerate(scenario.obstacles):
            env = dict(x)
            env.update(region_env(k, r, t))
            env[TIME.name] = tval
            val = np.broadcast_to(r.polynomial.evaluate(env), (n,))
            counts[t, k] = np.count_nonzero(val <= 0)
        if t == T:
            break
        env = dict(x)
        for j, sym in enumerate(noise_syms):
            env[sym.name] = rv.sample(dyn.noises[sym], _rng(seed, _DYN, c, t, j), n)
        for j, u in enumerate(dyn.controls):
            env[u.name] = float(controls[t, j])
        env[TIME.name] = tval
        x = {s.name: np.broadcast_to(np.asarray(dyn.updates[s].evaluate(env), dtype=float), (n,)).copy()
             for s in dyn.states}
    goal = None
    if scenario.goal is not None:
        env = dict(x)
        for j, (sym, dist) in enumerate(scenario.goal.noises.items()):
            env[sym.name] = rv.sample(dist, _rng(seed, _GOAL, c, T, j), n)
        env[TIME.name] = scenario.time_value(T)
        goal = int(np.count_nonzero(np.broadcast_to(scenario.goal.polynomial.evaluate(env), (n,)) <= 0))
    return counts, goal, sums, sumsq


def simulate(scenario, controls, samples: int, seed: int, basis=None, alpha_max: int | None = None,
             noise_mode: str = REDRAW, workers: int = 1, chunk: int = CHUNK) -> McReport:
    """Sample ``samples`` trajectories under ``controls`` (shape ``[T, nu]``)."""
    from .propagation import build_augmented_basis

    if samples < 1:
        raise ValueError("samples must be positive")
    if noise_mode not in (REDRAW, PERSISTENT):
        raise ValueError(f"noise_mode must be {REDRAW!r} or {PERSISTENT!r}")
    T = scenario.horizon
    nu = len(scenario.dynamics.controls)
    controls = np.asarray(controls, dtype=float)
    if controls.size != T * nu:
        raise ValueError(f"expected {T} steps of {nu} controls, got shape {controls.shape}")
    controls = controls.reshape(T, nu)
    if basis is None:
        basis = build_augmented_basis(scenario.dynamics, scenario.aux_trig_states, scenario.required_basis())
    alpha_max = alpha_max if alpha_max is not None else scenario.default_alpha_max()
    sizes = [min(chunk, samples - a) for a in range(0, samples, chunk)]

    def run(c):
        return _chunk(scenario, controls, basis, alpha_max, seed, c, sizes[c], noise_mode)

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, range(len(sizes))))
    else:
        parts = [run(c) for c in range(len(sizes))]
    counts = sum(p[0] for p in parts)
    goal = None if scenario.goal is None else sum(p[1] for p in parts)
    sums = parts[0][2].copy()
    sumsq = parts[0][3].copy()
    for p in parts[1:]:
        sums += p[2]
        sumsq += p[3]
    return McReport(
        samples=samples,
        seed=seed,
        noise_mode=noise_mode,
        obstacle_names=[r.name for r in scenario.obstacles],
        counts=counts,
        goal_count=goal,
        basis_names=list(basis.names),
        alpha_max=alpha_max,
        moment_sums=sums,
        moment_sumsq=sumsq,
        dt=scenario.dynamics.dt,
    )


def empirical_moments(samples, basis, alpha_max: int) -> MomentVector:
    """Sample means of basis monomials; ``samples`` maps state names to arrays."""
    B = basis.values({k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in samples.items()})
    if B.shape[0] == 0:
        raise ValueError("need at least one sample")
    E = np.array(_layout(len(basis), alpha_max), dtype=np.int64)
    s1, _ = kernels.moment_sums(B, E)
    return MomentVector(basis, alpha_max, s1 / B.shape[0])
