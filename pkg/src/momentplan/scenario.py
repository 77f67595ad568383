"""Scenario files (YAML): loading with located errors, canonical dump, hashing.

A scenario document looks like::

    name: example3
    dt: 1.0
    states: [x, th]
    controls: [v]
    noises:
      w: {kind: uniform, low: -0.1, high: 0.1}
    dynamics:
      x: x + v*cos(th)
      th: th + w
    initial:
      x: {kind: point, value: 0}
      th: {kind: uniform, low: -0.1, high: 0.1}
    horizon: 5
    delta: 0.1
    delta_goal: 0.1
    obstacles:
      - name: disk
        polynomial: (x - 2)^2 - 0.25
    goal: {polynomial: (x - 4)^2 - 0.5}
    cost: {stage: v^2}

Distributions are ``uniform(low, high)``, ``gaussian(mean, variance)``,
``beta(a, b, support=[lo, hi])`` or ``point(value)``; a bare number is a
point mass.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from . import rv
from .expr import TIME, MtpExpression, ParseError, Symbol, Tag, parse
from .nlp import Scenario
from .propagation import DynamicsSpec
from .risk import GOAL, OBSTACLE, UncertainRegion

TOP_KEYS = {
    "name", "dt", "states", "controls", "noises", "dynamics", "initial", "horizon", "delta", "delta_goal",
    "obstacles", "goal", "cost", "control_bounds", "alpha_max", "aux_trig_states", "initial_controls",
    "solver", "verify", "obstacle_start",
}


class ScenarioError(ValueError):
    def __init__(self, message, line=None, column=None, source=None):
        self.line, self.column, self.source = line, column, source
        where = ""
        if line is not None:
            where = f"{source or '<scenario>'}:{line}:{column}: "
        super().__init__(where + message)


class _MDict(dict):
    marks: dict


class _MList(list):
    marks: list


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    d = _MDict()
    d.marks = {}
    d.mark = node.start_mark
    for knode, vnode in node.value:
        key = loader.construct_object(knode, deep=True)
        if key in d:
            raise ScenarioError(f"duplicate key {key!r}", knode.start_mark.line + 1, knode.start_mark.column + 1)
        d[key] = loader.construct_object(vnode, deep=True)
        d.marks[key] = vnode.start_mark
    return d


def _construct_sequence(loader, node):
    lst = _MList(loader.construct_object(v, deep=True) for v in node.value)
    lst.marks = [v.start_mark for v in node.value]
    lst.mark = node.start_mark
    return lst


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


class _Ctx:
    def __init__(self, source):
        self.source = source

    def fail(self, msg, container=None, key=None, offset=None):
        mark = None
        if isinstance(container, _MDict) and key in container.marks:
            mark = container.marks[key]
        elif isinstance(container, _MList) and isinstance(key, int) and key < len(container.marks):
            mark = container.marks[key]
        elif container is not None and hasattr(container, "mark"):
            mark = container.mark
        if mark is None:
            raise ScenarioError(msg, source=self.source)
        col = mark.column + 1
        if offset is not None:
            # plain or quoted scalar on one line: point at the offending character
            col += offset + (1 if mark.buffer and mark.pointer < len(mark.buffer) and mark.buffer[mark.pointer] in "'\"" else 0)
        raise ScenarioError(msg, mark.line + 1, col, self.source)

    def get(self, d, key, kind=None, required=True, default=None):
        if not isinstance(d, dict):
            self.fail("expected a mapping", d)
        if key not in d:
            if required:
                self.fail(f"missing required key {key!r}", d)
            return default
        v = d[key]
        if kind is not None and v is not None and not isinstance(v, kind):
            if kind is float and isinstance(v, int) and not isinstance(v, bool):
                return float(v)
            self.fail(f"{key!r} must be {getattr(kind, '__name__', kind)}", d, key)
        return v

    def number(self, d, key, **kw):
        v = self.get(d, key, **kw)
        if v is None:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"{key!r} must be a number", d, key)
        return float(v)

    def expr(self, d, key, table):
        text = d[key]
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            text = repr(float(text))
        if not isinstance(text, str):
            self.fail(f"{key!r} must be an expression string", d, key)
        try:
            return parse(text, table)
        except ParseError as exc:
            self.fail(f"in {key!r}: {exc.args[0]}", d, key, exc.position)
        except ValueError as exc:
            self.fail(f"in {key!r}: {exc}", d, key)


def _dist(ctx, container, key):
    spec = container[key]
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return rv.PointMass(float(spec))
    if not isinstance(spec, dict):
        ctx.fail(f"distribution for {key!r} must be a mapping with 'kind'", container, key)
    kind = ctx.get(spec, "kind", str)
    try:
        if kind == "uniform":
            return rv.Uniform(ctx.number(spec, "low"), ctx.number(spec, "high"))
        if kind == "gaussian":
            return rv.Gaussian(ctx.number(spec, "mean"), ctx.number(spec, "variance"))
        if kind == "beta":
            sup = ctx.get(spec, "support", list, required=False, default=[0.0, 1.0])
            if len(sup) != 2:
                ctx.fail("beta support must be [lo, hi]", spec, "support")
            nodes = int(ctx.number(spec, "nodes", required=False, default=128))
            return rv.Beta(ctx.number(spec, "a"), ctx.number(spec, "b"), float(sup[0]), float(sup[1]), nodes)
        if kind == "point":
            return rv.PointMass(ctx.number(spec, "value"))
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        ctx.fail(str(exc), container, key)
    ctx.fail(f"unknown distribution kind {kind!r} (uniform, gaussian, beta, point)", spec, "kind")


def dist_to_doc(d) -> dict:
    if isinstance(d, rv.Uniform):
        return {"kind": "uniform", "low": d.low, "high": d.high}
    if isinstance(d, rv.Gaussian):
        return {"kind": "gaussian", "mean": d.mu, "variance": d.var}
    if isinstance(d, rv.Beta):
        out = {"kind": "beta", "a": d.a, "b": d.b, "support": [d.lo, d.hi]}
        if d.nodes != 128:
            out["nodes"] = d.nodes
        return out
    if isinstance(d, rv.PointMass):
        return {"kind": "point", "value": d.value}
    raise TypeError(f"cannot serialize {d!r}")


def _names(ctx, d, key, required=True):
    lst = ctx.get(d, key, list, required=required, default=[])
    for i, n in enumerate(lst):
        if not isinstance(n, str) or not n.isidentifier():
            ctx.fail(f"{n!r} is not a valid identifier", lst, i)
    return list(lst)


class _Table(dict):
    def declare(self, ctx, name, sym, container, key):
        if name == TIME.name or name == "pi":
            ctx.fail(f"{name!r} is reserved", container, key)
        if name in self:
            ctx.fail(f"symbol {name!r} declared twice", container, key)
        self[name] = sym


def from_document(doc, source=None) -> tuple[Scenario, dict]:
    """Build a Scenario from a parsed YAML tree; also returns run options."""
    ctx = _Ctx(source)
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping", 1, 1, source)
    for k in doc:
        if k not in TOP_KEYS:
            ctx.fail(f"unknown key {k!r}", doc, k)
    table = _Table()
    states = _names(ctx, doc, "states")
    controls = _names(ctx, doc, "controls", required=False)
    for i, n in enumerate(states):
        table.declare(ctx, n, Symbol(n, Tag.STATE), doc["states"], i)
    for i, n in enumerate(controls):
        table.declare(ctx, n, Symbol(n, Tag.CONTROL), doc["controls"], i)
    noise_doc = ctx.get(doc, "noises", dict, required=False, default={}) or {}
    noises = {}
    for n in noise_doc:
        table.declare(ctx, n, Symbol(n, Tag.NOISE), noise_doc, n)
        noises[table[n]] = _dist(ctx, noise_doc, n)
    # obstacle noises are scoped to their region but share the name space
    obs_docs = ctx.get(doc, "obstacles", list, required=False, default=[]) or []
    goal_doc = ctx.get(doc, "goal", dict, required=False)
    region_noises = []
    for rd in list(obs_docs) + ([goal_doc] if goal_doc is not None else []):
        nd = ctx.get(rd, "noises", dict, required=False, default={}) or {}
        env = {}
        for n in nd:
            table.declare(ctx, n, Symbol(n, Tag.NOISE), nd, n)
            env[table[n]] = _dist(ctx, nd, n)
        region_noises.append(env)
    table[TIME.name] = TIME

    dyn_doc = ctx.get(doc, "dynamics", dict)
    updates = {}
    for n in dyn_doc:
        if n not in states:
            ctx.fail(f"dynamics given for undeclared state {n!r}", dyn_doc, n)
        updates[table[n]] = ctx.expr(dyn_doc, n, table)
    for n in states:
        if n not in dyn_doc:
            ctx.fail(f"no dynamics for state {n!r}", doc, "dynamics")
    for s, e in updates.items():
        for sym in e.symbols():
            if sym.tag == Tag.NOISE and Symbol(sym.root, Tag.NOISE) not in noises:
                ctx.fail(f"dynamics of {s.name} use obstacle noise {sym.root}", dyn_doc, s.name)
    dt = ctx.number(doc, "dt", required=False, default=1.0)
    dyn = DynamicsSpec(tuple(table[n] for n in states), updates, noises, tuple(table[n] for n in controls), dt)

    init_doc = ctx.get(doc, "initial", dict)
    initial = {}
    for n in init_doc:
        if n not in states:
            ctx.fail(f"initial distribution for undeclared state {n!r}", init_doc, n)
        initial[n] = _dist(ctx, init_doc, n)
    for n in states:
        if n not in initial:
            ctx.fail(f"no initial distribution for state {n!r}", doc, "initial")

    def region(rd, role, env, label):
        poly = ctx.expr(rd, "polynomial", table)
        for sym in poly.symbols():
            if sym.tag == Tag.CONTROL:
                ctx.fail(f"{label} polynomial uses control {sym.root}", rd, "polynomial")
            if sym.tag == Tag.NOISE and Symbol(sym.root, Tag.NOISE) not in env:
                ctx.fail(f"{label} polynomial uses noise {sym.root} declared elsewhere", rd, "polynomial")
        try:
            return UncertainRegion(poly, env, role, label)
        except ValueError as exc:
            ctx.fail(f"{label}: {exc}", rd, "polynomial")

    obstacles = []
    for i, rd in enumerate(obs_docs):
        label = ctx.get(rd, "name", str, required=False, default=f"obstacle{i + 1}")
        obstacles.append(region(rd, OBSTACLE, region_noises[i], label))
    goal = region(goal_doc, GOAL, region_noises[-1], "goal") if goal_doc is not None else None

    cost_doc = ctx.get(doc, "cost", dict, required=False, default={}) or {}
    stage = ctx.expr(cost_doc, "stage", table) if "stage" in cost_doc else MtpExpression()
    terminal = ctx.expr(cost_doc, "terminal", table) if "terminal" in cost_doc else MtpExpression()
    for sym in terminal.symbols():
        if sym.tag == Tag.CONTROL:
            ctx.fail("terminal cost cannot use controls", cost_doc, "terminal")

    bounds_doc = ctx.get(doc, "control_bounds", dict, required=False, default={}) or {}
    bounds = {}
    for n in bounds_doc:
        if n not in controls:
            ctx.fail(f"bounds for undeclared control {n!r}", bounds_doc, n)
        b = bounds_doc[n]
        if not isinstance(b, list) or len(b) != 2 or not all(isinstance(v, (int, float)) for v in b) or b[0] > b[1]:
            ctx.fail("bounds must be [lo, hi] with lo <= hi", bounds_doc, n)
        bounds[n] = (float(b[0]), float(b[1]))

    aux = _names(ctx, doc, "aux_trig_states", required=False)
    for i, n in enumerate(aux):
        if n not in states:
            ctx.fail(f"{n!r} is not a state", doc["aux_trig_states"], i)

    u0 = ctx.get(doc, "initial_controls", list, required=False)
    if u0 is not None:
        try:
            u0 = np.asarray(u0, dtype=float)
            np.broadcast_to(u0, (int(doc.get("horizon", 1)), len(controls)))
        except (ValueError, TypeError):
            ctx.fail("initial_controls must be one row per step or one shared row", doc, "initial_controls")

    options = {
        "solver": dict(ctx.get(doc, "solver", dict, required=False, default={}) or {}),
        "verify": dict(ctx.get(doc, "verify", dict, required=False, default={}) or {}),
    }
    horizon = ctx.get(doc, "horizon", int)
    alpha_max = ctx.get(doc, "alpha_max", int, required=False)
    try:
        scen = Scenario(
            name=ctx.get(doc, "name", str, required=False, default="scenario"),
            dynamics=dyn,
            initial=initial,
            obstacles=obstacles,
            goal=goal,
            horizon=horizon,
            delta=ctx.number(doc, "delta"),
            delta_goal=ctx.number(doc, "delta_goal", required=False, default=0.1),
            stage_cost=stage,
            terminal_cost=terminal,
            control_bounds=bounds,
            alpha_max=alpha_max,
            aux_trig_states=tuple(table[n] for n in aux),
            initial_controls=u0,
            options=options,
            obstacle_start=ctx.get(doc, "obstacle_start", int, required=False, default=0),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc), source=source) from exc
    return scen, options


def loads(text: str, source=None) -> Scenario:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        m = exc.problem_mark or exc.context_mark
        raise ScenarioError(f"YAML syntax: {exc.problem or exc}", m.line + 1 if m else None, m.column + 1 if m else None,
                            source) from exc
    scen, _ = from_document(doc, source)
    return scen


def load(path) -> Scenario:
    path = Path(path)
    return loads(path.read_text(), str(path))


def to_document(s: Scenario) -> dict:
    """Canonical plain-data form; equal documents mean equal scenarios."""
    dyn = s.dynamics
    doc = {
        "name": s.name,
        "dt": float(dyn.dt),
        "states": [x.name for x in dyn.states],
        "controls": [c.name for c in dyn.controls],
        "noises": {k.name: dist_to_doc(v) for k, v in dyn.noises.items()},
        "dynamics": {x.name: str(dyn.updates[x]) for x in dyn.states},
        "initial": {x.name: dist_to_doc(s.initial[x.name]) for x in dyn.states},
        "horizon": int(s.horizon),
        "delta": float(s.delta),
        "delta_goal": float(s.delta_goal),
        "obstacles": [
            {"name": r.name, "polynomial": str(r.polynomial),
             "noises": {k.name: dist_to_doc(v) for k, v in r.noises.items()}}
            for r in s.obstacles
        ],
    }
    if s.goal is not None:
        doc["goal"] = {"polynomial": str(s.goal.polynomial),
                       "noises": {k.name: dist_to_doc(v) for k, v in s.goal.noises.items()}}
    doc["cost"] = {"stage": str(s.stage_cost), "terminal": str(s.terminal_cost)}
    doc["control_bounds"] = {k: [float(a), float(b)] for k, (a, b) in s.control_bounds.items()}
    doc["alpha_max"] = s.alpha_max
    doc["aux_trig_states"] = [x.name for x in s.aux_trig_states]
    if s.obstacle_start:
        doc["obstacle_start"] = int(s.obstacle_start)
    if s.initial_controls is not None:
        doc["initial_controls"] = np.asarray(s.initial_controls, dtype=float).tolist()
    opts = s.options or {}
    for k in ("solver", "verify"):
        if opts.get(k):
            doc[k] = dict(opts[k])
    return doc


def dumps(s: Scenario) -> str:
    return yaml.safe_dump(to_document(s), sort_keys=False, default_flow_style=None, width=1000)


def scenario_hash(s: Scenario) -> str:
    blob = json.dumps(to_document(s), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package."""
    p = Path(__file__).parent / "scenarios" / (name if name.endswith(".yaml") else name + ".yaml")
    if not p.exists():
        raise FileNotFoundError(f"no bundled scenario {name!r}")
    return p


def bundled_names() -> list[str]:
    return sorted(p.stem for p in (Path(__file__).parent / "scenarios").glob("*.yaml"))
