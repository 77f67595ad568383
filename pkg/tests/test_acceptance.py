"""Acceptance criteria 1-9 at the stated tolerances.

Each test records a one-line PASS/FAIL summary that is printed at the end of
the pytest run.  Assertions come after the summary line is recorded, so a
failing criterion still reports its measured numbers.
"""
import dataclasses
import hashlib
import time

import numpy as np
import pytest

from momentplan import cli, mc, rv, scenario
from momentplan.expr import parse
from momentplan.nlp import assemble
from momentplan.propagation import _layout, build_augmented_basis, build_moment_system
from momentplan.risk import expected_poly, mc_risk_contour
from momentplan.solver import SolverOptions, Status, solve

from conftest import quad_moment

pytestmark = pytest.mark.slow


def test_criterion_1_moment_oracles(report):
    t0 = time.perf_counter()
    keys = [(p, c, s) for p in range(9) for c in range(9) for s in range(9) if 0 < p + c + s <= 8]
    dists = [rv.Uniform(-0.7, 1.3), rv.Uniform(0.3, 0.4), rv.Gaussian(0.4, 0.25), rv.Gaussian(-1.5, 2.0),
             rv.Beta(9.0, 0.5), rv.Beta(2.5, 1.5, -1.0, 1.0)]
    worst = {}
    for d in dists:
        err = max(abs(rv.mixed_trig_moment(d, k) - quad_moment(d, *k)) for k in keys)
        worst[type(d).__name__] = max(worst.get(type(d).__name__, 0.0), err)
    dt = time.perf_counter() - t0
    ok = worst["Uniform"] <= 1e-8 and worst["Gaussian"] <= 1e-8 and worst["Beta"] <= 1e-6 and dt < 10
    report(1, ok, f"max abs error {', '.join(f'{k} {v:.1e}' for k, v in worst.items())}; {len(keys)} keys; {dt:.1f} s")
    assert ok


def test_criterion_2_example1_golden(report):
    t0 = time.perf_counter()
    scen = scenario.load(scenario.bundled("example1"))
    p = assemble(scen)
    ep, ep2 = expected_poly(scen.obstacles[0], p.basis, p.alpha_max)
    names = {n: i for i, n in enumerate(cli.monomial_names(p.basis, p.alpha_max))}
    c_r2 = ep2.dense(p.n)[names["x1^2"]]
    dt = time.perf_counter() - t0
    ok = (abs(ep.const + 0.1233333333333) < 1e-12 and abs(ep2.const - 0.01562) < 1e-12
          and abs(c_r2 + 0.2466666666667) < 1e-12 and f"{-ep.const:.3f}" == "0.123"
          and f"{ep2.const:.3f}"[:5] == "0.016" and dt < 1)
    report(2, ok, f"E[p] const {ep.const:.6f}, E[p^2] consts ({ep2.const:.6f}, {c_r2:.6f}); {dt:.2f} s")
    assert ok


def test_criterion_3_example3_golden(report):
    t0 = time.perf_counter()
    scen = scenario.load(scenario.bundled("example3"))
    dyn = scen.dynamics
    basis = build_augmented_basis(dyn, scen.aux_trig_states, [parse("x", dyn.states)])
    sys = build_moment_system(dyn, basis, 2)
    w = next(iter(dyn.noises.values()))
    mc_, ms, mc2, ms2, mcs = (quad_moment(w, 0, *k) for k in [(1, 0), (0, 1), (2, 0), (0, 2), (1, 1)])
    gen = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        v = gen.uniform(-3, 3)
        A1 = np.array([[1, v, 0], [0, mc_, -ms], [0, ms, mc_]])
        A2 = np.array([
            [1, 2 * v, 0, v * v, 0, 0],
            [0, mc_, -ms, v * mc_, -v * ms, 0],
            [0, ms, mc_, v * ms, v * mc_, 0],
            [0, 0, 0, mc2, -2 * mcs, ms2],
            [0, 0, 0, mcs, mc2 - ms2, -mcs],
            [0, 0, 0, ms2, 2 * mcs, mc2],
        ])
        m = gen.normal(size=9)
        M = sys.matrix([v], 0.0)
        got = M[1:, 1:] @ m + M[1:, 0]
        ref = np.concatenate([A1 @ m[:3], A2 @ m[3:]])
        worst = max(worst, float(np.max(np.abs(got - ref))), float(np.max(np.abs(M[1:4, 1:4] - A1))),
                    float(np.max(np.abs(M[4:, 4:] - A2))))
    dt = time.perf_counter() - t0
    ok = basis.names == ("x", "cos(th)", "sin(th)") and worst <= 1e-12 and dt < 1
    report(3, ok, f"basis {list(basis.names)}, max deviation {worst:.1e} over 20 draws; {dt:.2f} s")
    assert ok


SECTION_IV = ["underwater", "aerial", "ground_vehicle"]


def test_criterion_4_propagation_exactness(report):
    t0 = time.perf_counter()
    gen = np.random.default_rng(7)
    worst_z, checked = 0.0, 0
    for name in SECTION_IV:
        scen = scenario.load(scenario.bundled(name))
        bare = dataclasses.replace(scen, obstacles=[], goal=None, horizon=10)
        p = assemble(scen)
        n4 = len(_layout(len(p.basis), 4))
        for _ in range(3):
            u = p.initial_guess() + gen.uniform(-1.0, 1.0, size=p.n_u)
            ms = p.moments_of(p.complete(u))
            rep = mc.simulate(bare, u.reshape(10, -1), 1_000_000, seed=int(gen.integers(1 << 30)),
                              basis=p.basis, alpha_max=4)
            for t in range(11):
                diff = np.abs(rep.moments[t] - ms[t][:n4])
                se = rep.moment_stderr[t]
                exact = se == 0
                assert np.all(diff[exact] < 1e-9)
                worst_z = max(worst_z, float(np.max(diff[~exact] / se[~exact], initial=0.0)))
                checked += n4
    dt = time.perf_counter() - t0
    ok = worst_z < 5 and dt < 300
    report(4, ok, f"{checked} moment checks, max |z| {worst_z:.2f} (limit 5); {dt:.0f} s")
    assert ok


def test_criterion_5_vp_soundness(report):
    t0 = time.perf_counter()
    scen = scenario.load(scenario.bundled("example2"))
    n = 100_000
    res = mc_risk_contour(scen.obstacles[0], [0.05, 0.1], (-1.0, 1.0, 41), n, seed=5)
    parts, ok = [], True
    for d, rows in res.items():
        risk, safe = rows[:, 2], rows[:, 3] > 0
        se = np.sqrt(np.maximum(risk * (1 - risk), 0) / n)
        mc_safe = risk <= d + 3 * se
        bad = int(np.count_nonzero(safe & ~mc_safe))
        inner = bool(np.all(mc_safe[safe])) and safe.sum() < mc_safe.sum()
        ok &= bad == 0 and inner
        parts.append(f"delta {d}: {int(safe.sum())} VP-safe / {int(mc_safe.sum())} MC-safe, {bad} violations")
    dt = time.perf_counter() - t0
    ok &= dt < 180
    report(5, ok, "; ".join(parts) + f"; {dt:.0f} s")
    assert ok


def _within(count, target):
    return abs(count - target) <= 0.1 * target


def _end_to_end(name, samples, goal_min, max_iter=500):
    scen = scenario.load(scenario.bundled(name))
    p = assemble(scen)
    c = p.counts()
    res = solve(p, SolverOptions(max_iter=max_iter))
    rep = mc.simulate(scen, res.controls.reshape(scen.horizon, -1), samples, seed=2024)
    risk = float(np.max(rep.risks[: scen.horizon]))
    return c, res, risk, rep.goal_probability


def test_criterion_6_underwater(report):
    t0 = time.perf_counter()
    c, res, risk, goal = _end_to_end("underwater", 1_000_000, 0.99)
    dt = time.perf_counter() - t0
    size_ok = _within(c["variables"], 700) and _within(c["constraints"], 900)
    ok = size_ok and res.status == Status.CONVERGED and risk <= 0.1 and goal >= 0.99 and dt < 900
    report(6, ok, f"{c['variables']} vars / {c['constraints']} constraints; solver {res.status.value} "
                  f"({res.message}); MC max risk {risk:.4f}, goal {goal:.4f} (needs >= 0.99); {dt:.0f} s")
    assert ok


def test_criterion_7_aerial_and_ground(report):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, (nv, nc) in (("aerial", (400, 600)), ("ground_vehicle", (2300, 2400))):
        c, res, risk, goal = _end_to_end(name, 1_000_000, 0.9)
        good = (_within(c["variables"], nv) and _within(c["constraints"], nc) and res.status == Status.CONVERGED
                and risk <= 0.1 and goal >= 0.9)
        ok &= good
        parts.append(f"{name} {c['variables']}/{c['constraints']} {res.status.value} in {res.iterations} it, "
                     f"risk {risk:.4f}, goal {goal:.4f}")
    dt = time.perf_counter() - t0
    ok &= dt < 1800
    report(7, ok, "; ".join(parts) + f"; {dt:.0f} s")
    assert ok


def test_criterion_8_gradients(report):
    t0 = time.perf_counter()
    p = assemble(scenario.load(scenario.bundled("underwater")))
    gen = np.random.default_rng(8)
    h = 1e-6
    worst, ncols = 0.0, 0
    for _ in range(10):
        u = gen.uniform(-2, 2, size=p.n_u)
        z = p.complete(u) * (1 + 0.01 * gen.normal(size=p.n_vars))
        gf, Je, Ji = p.gradients(z)
        Je, Ji = Je.tocsc(), Ji.tocsc()
        cols = np.concatenate([np.arange(p.n_u), gen.choice(np.arange(p.n_u, p.n_vars), 80, replace=False)])
        for c in cols:
            e = np.zeros(p.n_vars)
            e[c] = h
            for an, fn in ((np.atleast_1d(gf[c]), p.objective), (Je[:, c].toarray().ravel(), p.eq),
                           (Ji[:, c].toarray().ravel(), p.ineq)):
                fd = (np.atleast_1d(fn(z + e)) - np.atleast_1d(fn(z - e))) / (2 * h)
                scale = max(1.0, float(np.max(np.abs(fd), initial=0.0)))
                worst = max(worst, float(np.max(np.abs(an - fd), initial=0.0)) / scale)
            ncols += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 60
    report(8, ok, f"max relative error {worst:.1e} over {ncols} columns at 10 points; {dt:.0f} s")
    assert ok


def _digest(folder):
    return {f.name: hashlib.sha256(f.read_bytes()).hexdigest() for f in sorted(folder.iterdir())}


def test_criterion_9_determinism(report, tmp_path):
    runs = {}
    for k, workers in enumerate((1, 1, 4)):
        out = tmp_path / f"run{k}"
        codes = (
            cli.main(["solve", "--scenario", "ground_vehicle", "--out-dir", str(out), "--seed", "3",
                      "--restarts", "1", "--workers", str(workers)]),
            cli.main(["verify", "--scenario", "ground_vehicle", "--controls", str(out / "controls.csv"),
                      "--samples", "200000", "--seed", "11", "--out-dir", str(out), "--workers", str(workers)]),
        )
        runs[k] = (codes, _digest(out))
    same = runs[0][1] == runs[1][1] == runs[2][1]
    ok = same and all(r[0] == (0, 0) for r in runs.values())
    report(9, ok, f"{len(runs[0][1])} files hash-equal across 3 runs (workers 1, 1, 4): {same}")
    assert ok
