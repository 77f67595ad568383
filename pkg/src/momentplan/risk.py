"""Moment-based risk contours from the one-sided Vysochanskij-Petunin bound.

For an obstacle ``{p <= 0}`` the collision probability is bounded through
``z = -p`` and ``r = E[p]``.  With ``ep = E[p]`` and ``ep2 = E[p^2]`` the
accepted set is

    4 (ep2 - ep^2) <= 9 delta ep2,   ep^2 >= 5/8 ep2,   ep >= 0

(the ratio constraint cleared of its denominator; ``ep2 >= eps`` guards the
sign).  For a goal ``{p_g <= 0}`` the same bound is applied to
``Prob(p_g > 0)`` with ``z = p_g`` and ``r = -E[p_g]``, which flips the sign
condition to ``ep <= 0`` and leaves the other two unchanged.  Every
constraint below is returned as a residual ``g >= 0``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import rv
from .expr import TIME, MissingDistribution, MtpExpression, Symbol, Tag, expect_noise

EPS = 1e-12
OBSTACLE = "obstacle"
GOAL = "goal"


class DegreeError(ValueError):
    """A region needs moments above the tracked order."""


@dataclass
class UncertainRegion:
    polynomial: MtpExpression
    noises: dict = field(default_factory=dict)
    role: str = OBSTACLE
    name: str = ""

    def __post_init__(self):
        if self.role not in (OBSTACLE, GOAL):
            raise ValueError(f"role must be {OBSTACLE!r} or {GOAL!r}")
        if self.polynomial.degree([Tag.STATE]) < 1:
            raise ValueError(f"region {self.name or self.polynomial} does not depend on the state")
        bound = {(k.name if isinstance(k, Symbol) else k) for k in self.noises}
        for s in self.polynomial.symbols():
            if s.tag == Tag.NOISE and s.root not in bound:
                raise MissingDistribution(s.root)
            if s.tag == Tag.CONTROL:
                raise ValueError(f"region {self.name} references control {s.root}")

    def state_degree(self) -> int:
        return self.polynomial.degree([Tag.STATE])

    def at_time(self, time_t: float) -> MtpExpression:
        return self.polynomial.substitute({TIME.name: time_t})

    def moments_expressions(self, time_t: float = 0.0):
        """``E[p]`` and ``E[p^2]`` over the region noise, as state expressions."""
        p = self.at_time(time_t)
        return expect_noise(p, self.noises), expect_noise(p * p, self.noises)


@dataclass(frozen=True)
class LinearForm:
    """``const + sum(coef[i] * m[idx[i]])`` over a flat moment vector."""

    const: float
    idx: np.ndarray
    coef: np.ndarray

    def __call__(self, m) -> float:
        m = np.asarray(m, dtype=float)
        return float(self.const + np.dot(self.coef, m[self.idx]))

    def dense(self, n: int) -> np.ndarray:
        g = np.zeros(n)
        np.add.at(g, self.idx, self.coef)
        return g


def _linear_form(expr: MtpExpression, basis, alpha_max: int, what: str) -> LinearForm:
    from .propagation import _layout_index

    index = _layout_index(len(basis), alpha_max)
    const = 0.0
    acc: dict = {}
    for key, coef in expr.items():
        if not key:
            const += coef
            continue
        bad = [f[0].name for f in key if f[0].tag != Tag.STATE]
        if bad:
            raise ValueError(f"{what} still depends on {bad} after taking expectations")
        exps = basis.factor(key)
        if exps is None:
            from .propagation import ClosureError, key_name

            raise ClosureError(f"{what} uses {key_name(key)}, which is not a product of basis functions")
        if sum(exps) > alpha_max:
            raise DegreeError(f"{what} needs moments of order {sum(exps)} but alpha_max is {alpha_max}")
        i = index[exps]
        acc[i] = acc.get(i, 0.0) + coef
    idx = np.array(sorted(acc), dtype=np.int64)
    return LinearForm(const, idx, np.array([acc[i] for i in idx], dtype=float))


def expected_poly(region: UncertainRegion, basis, alpha_max: int, time_t: float = 0.0):
    """``(E[p], E[p^2])`` as linear forms in the moment vector at ``time_t``."""
    ep, ep2 = region.moments_expressions(time_t)
    label = region.name or "region"
    return (
        _linear_form(ep, basis, alpha_max, f"E[p] of {label}"),
        _linear_form(ep2, basis, alpha_max, f"E[p^2] of {label}"),
    )


def _vp(ep, ep2, delta, sign):
    ep = np.asarray(ep, dtype=float)
    ep2 = np.asarray(ep2, dtype=float)
    g = np.stack([
        9.0 * delta * ep2 - 4.0 * (ep2 - ep * ep),
        ep * ep - 0.625 * ep2,
        sign * ep,
        ep2 - EPS,
    ])
    one = np.ones_like(ep)
    zero = np.zeros_like(ep)
    # rows: constraints; columns: d/d ep, d/d ep2
    jac = np.stack([
        np.stack([8.0 * ep, (9.0 * delta - 4.0) * one]),
        np.stack([2.0 * ep, -0.625 * one]),
        np.stack([sign * one, zero]),
        np.stack([zero, one]),
    ])
    return g, jac


def vp_obstacle_constraints(ep, ep2, delta: float):
    """Residuals ``g >= 0`` (4 rows: ratio, shape, sign, guard) and their
    derivatives with respect to ``(ep, ep2)``."""
    _check_delta(delta)
    return _vp(ep, ep2, delta, 1.0)


def vp_goal_constraints(ep, ep2, delta_goal: float):
    """Goal version: bounds ``Prob(p_g > 0)``; the sign row becomes ``-ep >= 0``."""
    _check_delta(delta_goal)
    return _vp(ep, ep2, delta_goal, -1.0)


def _check_delta(delta):
    if not 0 < delta <= 1:
        raise ValueError(f"risk bound must lie in (0, 1], got {delta}")


def vp_accepts(ep, ep2, delta: float, role: str = OBSTACLE, tol: float = 0.0):
    g, _ = (vp_obstacle_constraints if role == OBSTACLE else vp_goal_constraints)(ep, ep2, delta)
    return np.all(g >= -tol, axis=0)


def vp_bound(ep: float, ep2: float) -> float:
    """The VP upper bound on the violation probability itself (diagnostics)."""
    var = ep2 - ep * ep
    r2 = ep * ep
    if var <= 0:
        return 0.0 if r2 > 0 else 1.0
    if r2 >= 5.0 / 3.0 * var:
        return 4.0 / 9.0 * var / (var + r2)
    return min(1.0, 4.0 / 3.0 * var / (var + r2) - 1.0 / 3.0)


# ---------------------------------------------------------------------------
# deterministic-state grids

def _grid_state_names(region, state_names):
    if state_names is not None:
        return list(state_names)
    names = sorted({s.root for s in region.polynomial.symbols() if s.tag == Tag.STATE})
    if len(names) != 2:
        raise ValueError(f"grid contours need exactly two states, region has {names}")
    return names


def grid_points(lo: float, hi: float, n: int):
    """``n x n`` grid over ``[lo, hi]^2``; x1 varies slowest."""
    ax = np.linspace(lo, hi, n)
    X1, X2 = np.meshgrid(ax, ax, indexing="ij")
    return X1.ravel(), X2.ravel()


def vp_grid(region: UncertainRegion, delta: float, x1, x2, state_names=None, time_t: float = 0.0):
    """VP acceptance at deterministic states (PointMass) on a grid."""
    names = _grid_state_names(region, state_names)
    ep_e, ep2_e = region.moments_expressions(time_t)
    env = {names[0]: np.asarray(x1, dtype=float), names[1]: np.asarray(x2, dtype=float)}
    ep = np.broadcast_to(ep_e.evaluate(env), np.shape(x1))
    ep2 = np.broadcast_to(ep2_e.evaluate(env), np.shape(x1))
    return vp_accepts(ep, ep2, delta, region.role), ep, ep2


def mc_point_risk(region: UncertainRegion, point: Mapping[str, float], samples: int, seed: int, index: int = 0,
                  time_t: float = 0.0) -> float:
    """MC estimate of ``Prob(p <= 0)`` (obstacle) or ``Prob(p > 0)`` (goal) at a fixed state."""
    p = region.at_time(time_t).substitute(point)
    noise_roots = sorted({s.root for s in p.symbols()})
    env_d = {(k.name if isinstance(k, Symbol) else k): v for k, v in region.noises.items()}
    env = {}
    for j, root in enumerate(noise_roots):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index, j))))
        env[root] = rv.sample(env_d[root], rng, samples)
    vals = np.broadcast_to(p.evaluate(env), (samples,))
    hit = vals <= 0 if region.role == OBSTACLE else vals > 0
    return float(np.count_nonzero(hit)) / samples


def mc_risk_contour(region: UncertainRegion, delta: float | Sequence[float], grid, samples: int, seed: int,
                    state_names=None, workers: int = 1, time_t: float = 0.0):
    """Grid classification: rows ``(x1, x2, mc_risk, vp_safe)`` per risk level.

    ``grid`` is ``(lo, hi, n)`` or a pair of flat coordinate arrays.  Point
    ``i`` draws its noise from streams keyed by ``(seed, i)``, so results do
    not depend on ``workers``.  Returns ``{delta: rows}`` with rows an array
    of shape ``[n_points, 4]``.
    """
    names = _grid_state_names(region, state_names)
    if len(grid) == 3 and np.isscalar(grid[0]):
        x1, x2 = grid_points(*grid)
    else:
        x1, x2 = (np.asarray(g, dtype=float).ravel() for g in grid)

    def one(i):
        return mc_point_risk(region, {names[0]: x1[i], names[1]: x2[i]}, samples, seed, i, time_t)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            risk = np.array(list(ex.map(one, range(len(x1)))))
    else:
        risk = np.array([one(i) for i in range(len(x1))])
    deltas = [delta] if np.isscalar(delta) else list(delta)
    out = {}
    for d in deltas:
        safe, _, _ = vp_grid(region, d, x1, x2, names, time_t)
        out[d] = np.column_stack([x1, x2, risk, safe.astype(float)])
    return out


def mc_stderr(p: np.ndarray, n: int) -> np.ndarray:
    return np.sqrt(np.clip(p * (1 - p), 0.0, None) / n)
