import numpy as np
import pytest

from momentplan import mc, scenario
from momentplan.nlp import assemble
from momentplan.solver import SolverOptions, Status, solve

REACH = """
name: reach
states: [x, y]
controls: [u]
noises:
  w: {kind: uniform, low: -0.05, high: 0.05}
dynamics:
  x: x + u + w
  y: y + 0.5*u
initial:
  x: 0
  y: 0
horizon: 3
delta: 0.1
delta_goal: 0.1
goal: {polynomial: (x - 1.5)^2 + (y - 0.75)^2 - 0.3^2}
cost: {stage: u^2}
control_bounds: {u: [-2, 2]}
"""


def test_goal_at_reachable_mean():
    # u = 0.5 per step lands the mean exactly on the goal centre
    scen = scenario.loads(REACH)
    p = assemble(scen)
    res = solve(p, SolverOptions())
    assert res.status == Status.CONVERGED
    assert res.eq_violation <= 1e-6 and res.ineq_violation <= 1e-6
    rep = mc.simulate(scen, res.controls.reshape(3, 1), 20000, seed=1)
    assert rep.goal_probability >= 0.9


def test_unreachable_goal_is_infeasible():
    text = REACH.replace("control_bounds: {u: [-2, 2]}", "control_bounds: {u: [-0.1, 0.1]}")
    res = solve(assemble(scenario.loads(text)), SolverOptions(max_iter=200))
    assert res.status == Status.INFEASIBLE
    assert res.ineq_violation > 1e-6


def test_deterministic_given_seed():
    p = assemble(scenario.load(scenario.bundled("example3")))
    opts = SolverOptions(restarts=2, seed=5)
    a, b = solve(p, opts), solve(p, opts)
    assert np.array_equal(a.controls, b.controls)
    assert a.objective == b.objective


def test_restarts_with_workers_match_serial():
    p = assemble(scenario.load(scenario.bundled("example3")))
    a = solve(p, SolverOptions(restarts=2, seed=5, workers=1))
    b = solve(p, SolverOptions(restarts=2, seed=5, workers=3))
    assert np.array_equal(a.controls, b.controls)


def test_converged_result_is_consistent():
    p = assemble(scenario.load(scenario.bundled("example3")))
    res = solve(p)
    assert res.converged
    assert len(res.moments) == p.T + 1
    assert res.objective == pytest.approx(float(np.sum(res.controls ** 2)), rel=1e-12)
