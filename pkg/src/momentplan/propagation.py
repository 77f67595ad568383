"""Exact moment propagation for mixed-trigonometric-polynomial dynamics.

The augmented basis is a set of state functions (``x``, ``cos(th)``,
``v*cos(th)``, ...) whose one-step images are affine in the basis with
coefficients depending on controls, noise and time.  Moments of products of
basis functions then evolve by an exact affine map, built here symbolically
and evaluated numerically per control value.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels, rv
from .expr import (
    TIME,
    MissingDistribution,
    MtpExpression,
    NonMtpError,
    Symbol,
    Tag,
    _mul_keys,
    as_linear,
    expect_noise,
    monomial_layout,
)


class ClosureError(ValueError):
    """Dynamics do not close over a finite mixed-trig-poly basis."""


@dataclass
class DynamicsSpec:
    states: tuple
    updates: dict
    noises: dict
    controls: tuple
    dt: float = 1.0  # advance of the time symbol per step

    def __post_init__(self):
        self.states = tuple(self.states)
        self.controls = tuple(self.controls)
        missing = [s.name for s in self.states if s not in self.updates]
        if missing:
            raise ValueError(f"no update expression for states {missing}")
        declared = set(self.states) | set(self.controls) | {TIME}
        noise_roots = {s.name for s in self.noises}
        for s, upd in self.updates.items():
            for sym in upd.symbols():
                if sym.tag == Tag.NOISE:
                    if sym.root not in noise_roots:
                        raise MissingDistribution(sym.root)
                elif Symbol(sym.root, sym.tag) not in declared:
                    raise ValueError(f"update of {s.name} references undeclared symbol {sym.root}")

    def trig_states(self) -> list[Symbol]:
        """States that appear inside a trig factor of some update."""
        found = set()
        for upd in self.updates.values():
            for k, _ in upd.items():
                for sym, p, c, s in k:
                    if sym.tag == Tag.STATE and (c or s):
                        found.add(sym)
        return [s for s in self.states if s in found]


def _state_key(key) -> tuple:
    return tuple(f for f in key if f[0].tag == Tag.STATE)


def _other_key(key) -> tuple:
    return tuple(f for f in key if f[0].tag != Tag.STATE)


def key_name(key) -> str:
    if not key:
        return "1"
    return str(MtpExpression({key: 1.0}))


@dataclass(frozen=True)
class AugmentedBasis:
    """Ordered basis functions; each entry is a state-monomial factor key."""

    entries: tuple

    @property
    def names(self) -> tuple:
        return tuple(key_name(k) for k in self.entries)

    def __len__(self):
        return len(self.entries)

    def index(self, key) -> int:
        return self.entries.index(key)

    def expression(self, j: int) -> MtpExpression:
        return MtpExpression({self.entries[j]: 1.0})

    def raw_key(self, exps: Sequence[int]) -> tuple:
        """State-monomial key of ``prod_j b_j^exps[j]``."""
        key = ()
        for j, e in enumerate(exps):
            for _ in range(e):
                key = _mul_keys(key, self.entries[j])
        return key

    def factor(self, raw_key, max_order: int | None = None):
        """Exponents over the basis reproducing a raw state monomial.

        Returns the lowest-order factorization (first found on ties) or
        ``None``.
        """
        return _factor(self.entries, tuple(raw_key), max_order if max_order is not None else 10**6)

    def values(self, env: Mapping[str, np.ndarray]) -> np.ndarray:
        """Basis functions evaluated on arrays keyed by state name: shape ``[N, nb]``."""
        cols = [self.expression(j).evaluate(env) for j in range(len(self))]
        n = max((np.size(c) for c in cols), default=0)
        return np.column_stack([np.broadcast_to(np.asarray(c, dtype=float), (n,)) for c in cols])


def _factor(entries, raw, budget):
    target = {f[0]: (f[1], f[2], f[3]) for f in raw}
    best = [None]
    nb = len(entries)
    ent = [{f[0]: (f[1], f[2], f[3]) for f in e} for e in entries]

    def divides(e, rem):
        return all(s in rem and all(a <= b for a, b in zip(v, rem[s])) for s, v in e.items())

    def rec(j, rem, exps, order):
        if order > budget or (best[0] is not None and order >= best[0][1]):
            return
        if all(v == (0, 0, 0) for v in rem.values()):
            best[0] = (tuple(exps), order)
            return
        if j == nb:
            return
        # try larger powers of entry j first
        powers = []
        r = dict(rem)
        k = 0
        while divides(ent[j], r):
            k += 1
            r = {s: tuple(a - b for a, b in zip(r[s], ent[j].get(s, (0, 0, 0)))) for s in r}
            powers.append((k, r))
        for k, r in reversed(powers):
            exps[j] = k
            rec(j + 1, r, exps, order + k)
        exps[j] = 0
        rec(j + 1, rem, exps, order)

    rec(0, target, [0] * nb, 0)
    return best[0][0] if best[0] is not None else None


def _check_angle_states(dyn: DynamicsSpec, angle_states):
    for th in angle_states:
        rest = dyn.updates[th] - MtpExpression.symbol(th)
        bad = [s.name for s in rest.symbols() if s.tag == Tag.STATE]
        if bad or rest.degree([Tag.STATE]) > 0:
            raise ClosureError(
                f"angle state {th.name} needs an update of the form {th.name} + f(controls, noise); "
                f"got {th.name} -> {dyn.updates[th]}"
            )
        try:
            # the increment must be linear so cos/sin of the update expand exactly
            as_linear(rest)
        except NonMtpError as exc:
            raise ClosureError(f"angle state {th.name}: increment {rest} is not linear") from exc


def _seed_keys(dyn, required, aux_trig_states):
    keys = []
    angle = set(dyn.trig_states()) | set(aux_trig_states)
    if required is None:
        for s in dyn.states:
            if s in angle:
                keys += [((s, 0, 1, 0),), ((s, 0, 0, 1),)]
            else:
                keys.append(((s, 1, 0, 0),))
    else:
        for r in required:
            if isinstance(r, Symbol):
                keys.append(((r, 1, 0, 0),))
            elif isinstance(r, MtpExpression):
                keys.extend(_state_key(k) for k, _ in r.items() if _state_key(k))
            else:
                keys.append(tuple(r))
    for s in aux_trig_states:
        keys += [((s, 0, 1, 0),), ((s, 0, 0, 1),)]
    return keys


def build_augmented_basis(dyn: DynamicsSpec, aux_trig_states=(), required=None, max_size: int = 64) -> AugmentedBasis:
    """Smallest basis closed under the dynamics that contains the seeds.

    ``required`` lists the state functions that must be tracked (symbols,
    factor keys or expressions whose state monomials are taken); by default
    every state, with angle states entering through their cos/sin pair.
    Any state monomial appearing in the image of a basis function is added
    until the set is closed.
    """
    angle = [s for s in dyn.states if s in set(dyn.trig_states()) | set(aux_trig_states)]
    _check_angle_states(dyn, angle)
    queue = [k for k in _seed_keys(dyn, required, aux_trig_states) if k]
    entries: list = []
    seen = set()
    while queue:
        key = queue.pop(0)
        if key in seen:
            continue
        if len(entries) >= max_size:
            raise ClosureError(f"basis exceeds {max_size} functions; dynamics are not closed (last: {key_name(key)})")
        seen.add(key)
        entries.append(key)
        for sk in _image_state_keys(dyn, key):
            if sk not in seen and sk not in queue:
                queue.append(sk)
    return AugmentedBasis(tuple(entries))


def _image(dyn, key) -> MtpExpression:
    try:
        return MtpExpression({key: 1.0}).compose(dyn.updates)
    except NonMtpError as exc:
        raise ClosureError(str(exc)) from exc


def _image_state_keys(dyn, key):
    out = []
    for term in _image(dyn, key).terms:
        sk = _state_key(term.factors)
        if sk and sk not in out:
            out.append(sk)
    return out


def augmented_map(dyn: DynamicsSpec, basis: AugmentedBasis) -> list[dict]:
    """Rows ``{col: coefficient}`` of ``b(t+1) = A b(t) + a``; ``col = -1`` is the constant."""
    index = {k: j for j, k in enumerate(basis.entries)}
    rows = []
    for key in basis.entries:
        row: dict = {}
        for k, coef in _image(dyn, key).items():
            sk = _state_key(k)
            if not sk:
                col = -1
            elif sk in index:
                col = index[sk]
            else:
                raise ClosureError(f"image of {key_name(key)} contains {key_name(sk)} outside the basis")
            row.setdefault(col, {})
            ok = _other_key(k)
            row[col][ok] = row[col].get(ok, 0.0) + coef
        rows.append({c: MtpExpression(d) for c, d in sorted(row.items())})
    return rows


# ---------------------------------------------------------------------------
# moment vectors

@dataclass
class MomentVector:
    basis: AugmentedBasis
    alpha_max: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.layout),):
            raise ValueError(f"expected {len(self.layout)} moments, got {self.values.shape}")

    @property
    def layout(self):
        return _layout(len(self.basis), self.alpha_max)

    def block(self, alpha: int) -> np.ndarray:
        lo, hi = _block_range(len(self.basis), alpha)
        return self.values[lo:hi]

    def __getitem__(self, exps):
        exps = tuple(exps)
        if sum(exps) == 0:
            return 1.0
        return self.values[_layout_index(len(self.basis), self.alpha_max)[exps]]

    def stacked(self) -> np.ndarray:
        return np.concatenate(([1.0], self.values))


_LAYOUTS: dict = {}


def _layout(n, alpha_max):
    if (n, alpha_max) not in _LAYOUTS:
        _LAYOUTS[(n, alpha_max)] = monomial_layout(n, alpha_max)
    return _LAYOUTS[(n, alpha_max)]


def _layout_index(n, alpha_max):
    return {e: i for i, e in enumerate(_layout(n, alpha_max))}


def _block_range(n, alpha):
    lo = sum(math.comb(n + a - 1, a) for a in range(1, alpha))
    return lo, lo + math.comb(n + alpha - 1, alpha)


def monomial_names(basis: AugmentedBasis, alpha_max: int) -> list[str]:
    out = []
    for e in _layout(len(basis), alpha_max):
        parts = []
        for name, k in zip(basis.names, e):
            if k:
                nm = name if len(name) < 2 or name.isidentifier() else f"[{name}]"
                parts.append(nm if k == 1 else f"{nm}^{k}")
        out.append("*".join(parts))
    return out


def initial_moments(init: Mapping, basis: AugmentedBasis, alpha_max: int) -> MomentVector:
    """Moments at t = 0 from independent per-state initial distributions."""
    env = {(k.name if isinstance(k, Symbol) else k): v for k, v in init.items()}
    vals = []
    for exps in _layout(len(basis), alpha_max):
        key = basis.raw_key(exps)
        v = 1.0
        for sym, p, c, s in key:
            if sym.name not in env:
                raise MissingDistribution(sym.name)
            v *= rv.mixed_trig_moment(env[sym.name], (p, c, s))
        vals.append(v)
    return MomentVector(basis, alpha_max, np.array(vals))


# ---------------------------------------------------------------------------
# moment system

@dataclass
class CompiledTerms:
    """Flat term table for numeric evaluation of many expressions at once."""

    coef: np.ndarray
    P: np.ndarray
    C: np.ndarray
    S: np.ndarray
    owner: np.ndarray  # which expression each term belongs to
    atom_base: np.ndarray  # index into the parameter vector
    atom_scale: np.ndarray

    @classmethod
    def build(cls, exprs: Sequence[MtpExpression], params: Sequence[Symbol]):
        pindex = {s.name: i for i, s in enumerate(params)}
        atoms: list = []
        aindex: dict = {}
        rows = []
        for i, e in enumerate(exprs):
            for k, coef in e.items():
                for f in k:
                    if f[0] not in aindex:
                        if f[0].root not in pindex:
                            raise ValueError(f"symbol {f[0].name} is not a parameter")
                        aindex[f[0]] = len(atoms)
                        atoms.append(f[0])
                rows.append((i, coef, k))
        A = len(atoms)
        K = len(rows)
        P = np.zeros((K, A), dtype=np.int64)
        C = np.zeros((K, A), dtype=np.int64)
        S = np.zeros((K, A), dtype=np.int64)
        coef = np.empty(K)
        owner = np.empty(K, dtype=np.int64)
        for t, (i, c, k) in enumerate(rows):
            owner[t] = i
            coef[t] = c
            for sym, p, cp, sp in k:
                a = aindex[sym]
                P[t, a], C[t, a], S[t, a] = p, cp, sp
        base = np.array([pindex[s.root] for s in atoms], dtype=np.int64)
        scale = np.array([s.scale for s in atoms], dtype=float)
        return cls(coef, P, C, S, owner, base, scale)

    def evaluate(self, params: np.ndarray, n_params: int | None = None):
        """Term values and their gradients with respect to the parameter vector."""
        x = self.atom_scale * np.asarray(params, dtype=float)[self.atom_base]
        vals, g_atoms = kernels.term_values_and_grads(self.coef, self.P, self.C, self.S, x)
        n_params = n_params if n_params is not None else len(params)
        grads = np.zeros((len(vals), n_params))
        for a in range(len(self.atom_base)):
            grads[:, self.atom_base[a]] += self.atom_scale[a] * g_atoms[:, a]
        return vals, grads


class MomentSystem:
    """Affine map on stacked moments ``z = [1, m_1, ..., m_alpha_max]``.

    ``rows[i]`` maps column indices of ``z`` to coefficient expressions in
    controls and time (noise already integrated out).
    """

    def __init__(self, basis, alpha_max, controls, rows, dt=1.0):
        self.basis = basis
        self.alpha_max = alpha_max
        self.controls = tuple(controls)
        self.rows = rows
        self.dt = dt
        self.params = self.controls + (TIME,)
        exprs, rr, cc = [], [], []
        for i, row in enumerate(rows):
            for c, e in row.items():
                exprs.append(e)
                rr.append(i + 1)
                cc.append(c)
        self._entry_rows = np.array(rr, dtype=np.int64)
        self._entry_cols = np.array(cc, dtype=np.int64)
        self._compiled = CompiledTerms.build(exprs, self.params)
        self.term_rows = self._entry_rows[self._compiled.owner]
        self.term_cols = self._entry_cols[self._compiled.owner]

    @property
    def layout(self):
        return _layout(len(self.basis), self.alpha_max)

    @property
    def size(self) -> int:
        return len(self.layout)

    def entry(self, row_exps, col_exps) -> MtpExpression:
        idx = _layout_index(len(self.basis), self.alpha_max)
        i = idx[tuple(row_exps)]
        c = 0 if sum(col_exps) == 0 else idx[tuple(col_exps)] + 1
        return self.rows[i].get(c, MtpExpression())

    def block(self, alpha: int) -> list[list[MtpExpression]]:
        """Order-alpha to order-alpha part as a matrix of expressions."""
        lo, hi = _block_range(len(self.basis), alpha)
        return [[self.rows[i].get(j + 1, MtpExpression()) for j in range(lo, hi)] for i in range(lo, hi)]

    def param_vector(self, controls, time_value: float) -> np.ndarray:
        if isinstance(controls, Mapping):
            u = [float(controls[c.name if c.name in controls else c]) for c in self.controls]
        else:
            u = list(np.asarray(controls, dtype=float).ravel())
        return np.array(u + [float(time_value)])

    def terms(self, controls, time_value: float):
        """Per-term values and parameter gradients (for sparse assembly)."""
        return self._compiled.evaluate(self.param_vector(controls, time_value))

    def matrix(self, controls, time_value: float = 0.0) -> np.ndarray:
        n = self.size + 1
        vals, _ = self.terms(controls, time_value)
        M = np.zeros((n, n))
        np.add.at(M, (self.term_rows, self.term_cols), vals)
        M[0, 0] = 1.0
        return M


def build_moment_system(dyn: DynamicsSpec, basis: AugmentedBasis, alpha_max: int) -> MomentSystem:
    if alpha_max < 1:
        raise ValueError("alpha_max must be at least 1")
    nb = len(basis)
    A = augmented_map(dyn, basis)
    layout = _layout(nb, alpha_max)
    index = {e: i + 1 for i, e in enumerate(layout)}
    unit = [tuple(1 if i == j else 0 for i in range(nb)) for j in range(nb)]

    const_entries = {}
    symbolic = {}
    for j, row in enumerate(A):
        for k, e in row.items():
            if e.is_constant():
                const_entries[(j, k)] = e.constant_value()
            else:
                symbolic[(j, k)] = e

    prod_cache: dict = {(): MtpExpression.constant(1.0)}
    exp_cache: dict = {}

    def product(sig):
        if sig not in prod_cache:
            # peel one factor off the last entry
            (jk, n) = sig[-1]
            rest = sig[:-1] + (((jk, n - 1),) if n > 1 else ())
            prod_cache[sig] = product(rest) * symbolic[jk]
        return prod_cache[sig]

    def expectation(sig):
        if sig not in exp_cache:
            exp_cache[sig] = expect_noise(product(sig), dyn.noises)
        return exp_cache[sig]

    rows = []
    for gamma in layout:
        per_j = []
        for j, g in enumerate(gamma):
            if g == 0:
                continue
            cols = list(A[j].keys())
            choices = []
            for combo in itertools.combinations_with_replacement(range(len(cols)), g):
                counts = [0] * len(cols)
                for c in combo:
                    counts[c] += 1
                mult = math.factorial(g)
                for n in counts:
                    mult //= math.factorial(n)
                choices.append(([(j, cols[c], n) for c, n in enumerate(counts) if n], mult))
            per_j.append(choices)
        acc: dict = {}
        for combo in itertools.product(*per_j):
            coef = 1.0
            delta = [0] * nb
            sig = []
            for parts, mult in combo:
                coef *= mult
                for j, k, n in parts:
                    if k >= 0:
                        delta = [a + n * b for a, b in zip(delta, unit[k])]
                    if (j, k) in const_entries:
                        coef *= const_entries[(j, k)] ** n
                    else:
                        sig.append(((j, k), n))
            if coef == 0:
                continue
            col = index[tuple(delta)] if any(delta) else 0
            ev = expectation(tuple(sorted(sig)))
            target = acc.setdefault(col, {})
            for k, v in ev.items():
                target[k] = target.get(k, 0.0) + coef * v
        for col, d in acc.items():
            for k in d:
                for f in k:
                    if f[0].tag in (Tag.STATE, Tag.NOISE):
                        raise ClosureError(f"moment map entry depends on {f[0].name}")
        rows.append({c: MtpExpression(d) for c, d in sorted(acc.items()) if MtpExpression(d)})
    return MomentSystem(basis, alpha_max, dyn.controls, rows, dyn.dt)


def propagate(sys: MomentSystem, m_t: MomentVector, controls_t, time_t: float = 0.0) -> MomentVector:
    """One step of the exact moment recursion."""
    z = sys.matrix(controls_t, time_t) @ m_t.stacked()
    return MomentVector(m_t.basis, m_t.alpha_max, z[1:])


def propagate_trajectory(sys: MomentSystem, m0: MomentVector, controls, dt: float | None = None) -> list[MomentVector]:
    dt = sys.dt if dt is None else dt
    traj = [m0]
    for k, u in enumerate(np.atleast_2d(np.asarray(controls, dtype=float))):
        traj.append(propagate(sys, traj[-1], u, k * dt))
    return traj
