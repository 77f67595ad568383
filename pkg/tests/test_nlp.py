import numpy as np
import pytest

from momentplan import scenario
from momentplan.nlp import assemble
from momentplan.risk import DegreeError

LINE = """
name: line
states: [x]
controls: [u]
noises:
  w: {kind: uniform, low: -0.05, high: 0.05}
dynamics:
  x: x + u + w
initial:
  x: {kind: gaussian, mean: 0, variance: 0.01}
horizon: 1
delta: 0.1
alpha_max: 3
cost: {stage: u^2}
"""


def test_closed_form_count_single_state():
    p = assemble(scenario.loads(LINE))
    n_mom = 3  # x, x^2, x^3
    c = p.counts()
    assert c["variables"] == 1 + 2 * n_mom
    assert c["equalities"] == 2 * n_mom
    assert c["inequalities"] == 0


@pytest.mark.parametrize("name,vars_,cons", [
    ("underwater", 735, 879), ("aerial", 404, 618), ("ground_vehicle", 2319, 2383),
])
def test_bundled_counts(name, vars_, cons):
    c = assemble(scenario.load(scenario.bundled(name))).counts()
    assert (c["variables"], c["constraints"]) == (vars_, cons)


def test_obstacle_start_drops_initial_rows():
    a = assemble(scenario.load(scenario.bundled("underwater"))).counts()
    b = assemble(scenario.load(scenario.bundled("underwater_wide_goal"))).counts()
    assert a["inequalities"] - b["inequalities"] == 4 * 4


def test_degree_error_when_alpha_too_small():
    with pytest.raises(DegreeError):
        assemble(scenario.load(scenario.bundled("example1")), alpha_max=3)


def test_completed_point_is_feasible_for_equalities():
    p = assemble(scenario.load(scenario.bundled("example3")))
    z = p.complete(np.full(p.n_u, 0.7))
    assert np.max(np.abs(p.eq(z))) < 1e-12


def _fd_check(p, z, cols, h=1e-6):
    gf, Je, Ji = p.gradients(z)
    Je, Ji = Je.toarray(), Ji.toarray()
    worst = 0.0
    for c in cols:
        e = np.zeros(p.n_vars)
        e[c] = h
        for an, fn in ((np.atleast_1d(gf[c]), p.objective), (Je[:, c], p.eq), (Ji[:, c], p.ineq)):
            fd = (np.atleast_1d(fn(z + e)) - np.atleast_1d(fn(z - e))) / (2 * h)
            worst = max(worst, float(np.max(np.abs(an - fd), initial=0.0)) / max(1.0, float(np.max(np.abs(fd), initial=0.0))))
    return worst


@pytest.mark.parametrize("name", ["example3", "aerial"])
def test_full_space_derivatives(name):
    p = assemble(scenario.load(scenario.bundled(name)))
    gen = np.random.default_rng(1)
    z = p.complete(p.initial_guess() + 0.1 * gen.normal(size=p.n_u))
    z = z * (1 + 0.01 * gen.normal(size=z.size))
    cols = gen.choice(p.n_vars, min(30, p.n_vars), replace=False)
    assert _fd_check(p, z, cols) <= 1e-5


def test_reduced_derivatives():
    p = assemble(scenario.load(scenario.bundled("ground_vehicle")))
    u = p.initial_guess() + 0.05
    f, df, g, Jg, _ = p.reduced(u)
    h = 1e-6
    for j in np.random.default_rng(2).choice(p.n_u, 6, replace=False):
        e = np.zeros(p.n_u)
        e[j] = h
        fp, _, gp, _, _ = p.reduced(u + e)
        fm, _, gm, _, _ = p.reduced(u - e)
        assert df[j] == pytest.approx((fp - fm) / (2 * h), rel=1e-5, abs=1e-7)
        assert np.allclose(Jg[:, j], (gp - gm) / (2 * h), rtol=1e-5, atol=1e-6)
