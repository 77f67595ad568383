"""Command line: ``momentplan {solve,verify,propagate,contour}``.

Exit codes: 0 success / PASS, 2 input or parse error, 3 infeasible,
4 iteration limit, 5 verification FAIL.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, mc, risk
from .expr import ParseError
from .nlp import assemble
from .propagation import ClosureError, monomial_names
from .scenario import ScenarioError, bundled, load, scenario_hash
from .solver import SolverOptions, Status, solve

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_MAXITER, EXIT_FAIL = 0, 2, 3, 4, 5

log = logging.getLogger("momentplan")


class InputError(Exception):
    pass


def _scenario(arg):
    p = Path(arg)
    if not p.exists():
        try:
            p = bundled(arg)
        except FileNotFoundError:
            raise InputError(f"scenario {arg!r} is neither a file nor a bundled scenario") from None
    return load(p)


def _header(scen, seed, extra=None) -> str:
    lines = [f"# momentplan {__version__}", f"# scenario: {scen.name} {scenario_hash(scen)}", f"# seed: {seed}"]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _fmt(x) -> str:
    return repr(float(x))


def write_controls(path, scen, controls, seed):
    names = [c.name for c in scen.dynamics.controls]
    rows = [_header(scen, seed).rstrip("\n"), "step," + ",".join(names)]
    for t, u in enumerate(np.asarray(controls).reshape(scen.horizon, len(names))):
        rows.append(f"{t}," + ",".join(_fmt(v) for v in u))
    _write(Path(path), "\n".join(rows) + "\n")


def read_controls(path, scen) -> np.ndarray:
    names = [c.name for c in scen.dynamics.controls]
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise InputError(f"{path}: no control rows")
    head = lines[0].split(",")
    if head[0] != "step" or head[1:] != names:
        raise InputError(f"{path}: header must be step,{','.join(names)}")
    try:
        rows = np.array([[float(v) for v in ln.split(",")[1:]] for ln in lines[1:]], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if rows.shape != (scen.horizon, len(names)):
        raise InputError(f"{path}: expected {scen.horizon} rows of {len(names)} controls, got {rows.shape[0]}")
    return rows


def _moment_tables(scen, problem, z, seed):
    names = monomial_names(problem.basis, problem.alpha_max)
    ms = problem.moments_of(z)
    head = _header(scen, seed)
    full = [head + "step,time," + ",".join(names)]
    for t, m in enumerate(ms):
        full.append(f"{t},{scen.time_value(t):.6g}," + ",".join(f"{v:.12e}" for v in m))
    nb = len(problem.basis)
    path = [head + "step,time," + ",".join(problem.basis.names)]
    for t, m in enumerate(ms):
        path.append(f"{t},{scen.time_value(t):.6g}," + ",".join(f"{v:.12e}" for v in m[:nb]))
    return "\n".join(full) + "\n", "\n".join(path) + "\n"


def cmd_solve(args) -> int:
    scen = _scenario(args.scenario)
    sopts = dict(scen.options.get("solver", {}))
    opts = SolverOptions(
        eq_tol=args.tol if args.tol is not None else sopts.get("tol", 1e-6),
        ineq_tol=args.tol if args.tol is not None else sopts.get("tol", 1e-6),
        max_iter=args.max_iter if args.max_iter is not None else sopts.get("max_iter", 500),
        restarts=args.restarts if args.restarts is not None else sopts.get("restarts", 0),
        seed=args.seed if args.seed is not None else sopts.get("seed", 0),
        workers=args.workers,
    )
    problem = assemble(scen)
    res = solve(problem, opts)
    out = Path(args.out_dir)
    write_controls(out / "controls.csv", scen, res.controls, opts.seed)
    full, path = _moment_tables(scen, problem, res.z, opts.seed)
    _write(out / "moments.csv", full)
    _write(out / "expected_path.csv", path)
    counts = problem.counts()
    summary = [_header(scen, opts.seed).rstrip("\n"),
               f"status: {res.status.value}", f"message: {res.message}", f"objective: {res.objective!r}",
               f"iterations: {res.iterations}", f"eq_violation: {res.eq_violation:.3e}",
               f"ineq_violation: {res.ineq_violation:.3e}", f"alpha_max: {problem.alpha_max}",
               f"basis: {', '.join(problem.basis.names)}"]
    summary += [f"{k}: {v}" for k, v in counts.items()]
    _write(out / "summary.txt", "\n".join(summary) + "\n")
    logrows = [_header(scen, opts.seed) + "iter,objective,violation,merit,step"]
    for h in res.history:
        logrows.append(f"{h['iter']},{h['objective']!r},{h['violation']:.6e},{h['merit']!r},{h['step']:.6e}")
    _write(out / "solver_log.csv", "\n".join(logrows) + "\n")
    print(f"{scen.name}: {res.status.value} after {res.iterations} iterations, objective {res.objective:.6g}")
    return {Status.CONVERGED: EXIT_OK, Status.INFEASIBLE: EXIT_INFEASIBLE, Status.MAX_ITER: EXIT_MAXITER}[res.status]


def cmd_verify(args) -> int:
    scen = _scenario(args.scenario)
    vopts = scen.options.get("verify", {})
    controls = read_controls(args.controls, scen)
    samples = args.samples if args.samples is not None else int(vopts.get("samples", 100000))
    seed = args.seed if args.seed is not None else int(vopts.get("seed", 0))
    mode = args.noise_mode or vopts.get("noise_mode", mc.REDRAW)
    rep = mc.simulate(scen, controls, samples, seed, noise_mode=mode, workers=args.workers)
    ok = rep.passes(scen.delta, scen.delta_goal)
    head = {"momentplan": __version__, "scenario": f"{scen.name} {scenario_hash(scen)}", "seed": seed}
    _write(Path(args.out_dir) / "mc_report.txt", rep.to_text(head, scen.delta, scen.delta_goal))
    worst = float(np.max(rep.risks[: scen.horizon], initial=0.0))
    goal = "n/a" if rep.goal_probability is None else f"{rep.goal_probability:.4f}"
    print(f"{scen.name}: {'PASS' if ok else 'FAIL'} (max step risk {worst:.4f}, goal probability {goal})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_propagate(args) -> int:
    scen = _scenario(args.scenario)
    problem = assemble(scen)
    u = read_controls(args.controls, scen) if args.controls else problem.initial_guess().reshape(scen.horizon, -1)
    z = problem.complete(u)
    full, path = _moment_tables(scen, problem, z, args.seed if args.seed is not None else 0)
    out = Path(args.out_dir)
    _write(out / "moments.csv", full)
    _write(out / "expected_path.csv", path)
    print(f"{scen.name}: propagated {scen.horizon} steps, {problem.n} moments per step")
    return EXIT_OK


def _grid(text):
    try:
        lo, hi, n = text.split(",")
        return float(lo), float(hi), int(n)
    except ValueError:
        raise InputError(f"--grid expects lo,hi,n, got {text!r}") from None


def cmd_contour(args) -> int:
    scen = _scenario(args.scenario)
    regions = {r.name: r for r in scen.obstacles}
    if not regions:
        raise InputError("scenario has no obstacles")
    name = args.obstacle or next(iter(regions))
    if name not in regions:
        raise InputError(f"no obstacle {name!r}; choose from {sorted(regions)}")
    deltas = args.delta or [scen.delta]
    for d in deltas:
        if not 0 < d <= 1:
            raise InputError(f"--delta must lie in (0, 1], got {d}")
    grid = _grid(args.grid)
    samples = args.samples if args.samples is not None else 100000
    seed = args.seed if args.seed is not None else 0
    res = risk.mc_risk_contour(regions[name], deltas, grid, samples, seed, workers=args.workers)
    out = Path(args.out_dir)
    for d, rows in res.items():
        head = _header(scen, seed, {"obstacle": name, "delta": d, "samples": samples, "grid": args.grid})
        body = ["x1,x2,mc_risk,vp_safe"] + [f"{r[0]:.6g},{r[1]:.6g},{r[2]:.6f},{int(r[3])}" for r in rows]
        _write(out / f"contour_{name}_delta_{d:g}.csv", head + "\n".join(body) + "\n")
        safe = rows[:, 3] > 0
        mc_safe = rows[:, 2] <= d
        print(f"delta {d:g}: {int(safe.sum())} VP-safe points, {int(mc_safe.sum())} MC-safe points of {len(rows)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="momentplan", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"momentplan {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, controls=False):
        p.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
        p.add_argument("--out-dir", default="out")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1)
        if controls:
            p.add_argument("--controls", help="controls CSV written by solve")

    p = sub.add_parser("solve", help="optimize controls and moments")
    common(p)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--restarts", type=int)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="Monte Carlo check of a control sequence")
    common(p, controls=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--noise-mode", choices=[mc.REDRAW, mc.PERSISTENT])
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("propagate", help="forward moment propagation only")
    common(p, controls=True)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("contour", help="VP and Monte Carlo risk contour on a grid")
    common(p)
    p.add_argument("--obstacle")
    p.add_argument("--delta", type=float, action="append")
    p.add_argument("--grid", default="-1,1,41", help="lo,hi,n")
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_contour)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "verify" and not args.controls:
        print("error: verify needs --controls", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (ScenarioError, ParseError, InputError, ClosureError, risk.DegreeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
