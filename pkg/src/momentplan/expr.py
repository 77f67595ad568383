"""Mixed-trigonometric-polynomial expressions over tagged symbols.

A term is ``coef * prod_s s^p cos(s)^c sin(s)^q``.  Trigonometric factors act
on single symbols only; ``cos``/``sin`` of a linear combination is rewritten
with the angle-sum identities when it is built.  A scaled argument such as
``cos(0.1*w)`` becomes a factor on a *derived* symbol ``0.1*w`` whose value is
the parent's value times the scale.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from . import rv


class ParseError(ValueError):
    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        self.position = position
        self.text = text
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{message}{where}")


class UnknownSymbol(ParseError):
    pass


class NonMtpError(ValueError):
    """Expression leaves the mixed-trigonometric-polynomial class."""


class MissingDistribution(KeyError):
    pass


class Tag(enum.IntEnum):
    STATE = 0
    CONTROL = 1
    NOISE = 2
    TIME = 3


@dataclass(frozen=True)
class Symbol:
    name: str
    tag: Tag
    parent: str | None = None
    scale: float = 1.0
    sort_key: tuple = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        root = self.parent if self.parent is not None else self.name
        object.__setattr__(self, "sort_key", (int(self.tag), root, self.parent is not None, self.scale))

    @property
    def root(self) -> str:
        return self.parent if self.parent is not None else self.name

    @property
    def is_derived(self) -> bool:
        return self.parent is not None

    def scaled(self, scale: float) -> "Symbol":
        """Derived symbol standing for ``scale * self``."""
        if self.is_derived:
            return Symbol(self.root, self.tag).scaled(scale * self.scale)
        if scale == 1.0:
            return self
        return Symbol(f"{scale!r}*{self.name}", self.tag, parent=self.name, scale=float(scale))

    def __str__(self):
        return self.name


def state(name):
    return Symbol(name, Tag.STATE)


def control(name):
    return Symbol(name, Tag.CONTROL)


def noise(name):
    return Symbol(name, Tag.NOISE)


TIME = Symbol("t", Tag.TIME)


class MtpTerm(NamedTuple):
    coefficient: float
    factors: tuple  # ((Symbol, poly_pow, cos_pow, sin_pow), ...)


def _fkey(f):
    return f[0].sort_key


def _mul_keys(a: tuple, b: tuple) -> tuple:
    if not a:
        return b
    if not b:
        return a
    d = {f[0]: [f[1], f[2], f[3]] for f in a}
    for sym, p, c, s in b:
        e = d.get(sym)
        if e is None:
            d[sym] = [p, c, s]
        else:
            e[0] += p
            e[1] += c
            e[2] += s
    return tuple(sorted(((k, v[0], v[1], v[2]) for k, v in d.items()), key=_fkey))


def _key_degree(key) -> int:
    return sum(f[1] + f[2] + f[3] for f in key)


def _term_sort_key(key):
    return (_key_degree(key), tuple((f[0].sort_key, -f[1], -f[2], -f[3]) for f in key))


class MtpExpression:
    """Immutable canonical expression; ``terms`` is the sorted term sequence."""

    __slots__ = ("_d", "_hash")

    def __init__(self, terms: Mapping[tuple, float] | None = None):
        self._d = {k: float(v) for k, v in (terms or {}).items() if v != 0}
        self._hash = None

    # -- construction -----------------------------------------------------
    @classmethod
    def _raw(cls, d):
        obj = cls.__new__(cls)
        obj._d = d
        obj._hash = None
        return obj

    @classmethod
    def constant(cls, value: float) -> "MtpExpression":
        return cls({(): value})

    @classmethod
    def symbol(cls, sym: Symbol, poly_pow: int = 1, cos_pow: int = 0, sin_pow: int = 0) -> "MtpExpression":
        if poly_pow == cos_pow == sin_pow == 0:
            return cls.constant(1.0)
        return cls({((sym, poly_pow, cos_pow, sin_pow),): 1.0})

    @classmethod
    def cos(cls, sym: Symbol):
        return cls.symbol(sym, 0, 1, 0)

    @classmethod
    def sin(cls, sym: Symbol):
        return cls.symbol(sym, 0, 0, 1)

    # -- inspection -------------------------------------------------------
    @property
    def terms(self) -> list[MtpTerm]:
        return [MtpTerm(self._d[k], k) for k in sorted(self._d, key=_term_sort_key)]

    def items(self):
        return self._d.items()

    def __len__(self):
        return len(self._d)

    def __bool__(self):
        return bool(self._d)

    def is_zero(self) -> bool:
        return not self._d

    def is_constant(self) -> bool:
        return all(not k for k in self._d)

    def constant_value(self) -> float:
        if not self.is_constant():
            raise ValueError("expression is not constant")
        return self._d.get((), 0.0)

    def symbols(self) -> set[Symbol]:
        return {f[0] for k in self._d for f in k}

    def degree(self, tags: Iterable[Tag] | None = None) -> int:
        """Max total (poly + trig) degree over factors whose tag is in ``tags``."""
        tags = set(tags) if tags is not None else set(Tag)
        return max((sum(f[1] + f[2] + f[3] for f in k if f[0].tag in tags) for k in self._d), default=0)

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = MtpExpression.constant(other)
        if not isinstance(other, MtpExpression):
            return NotImplemented
        return self._d == other._d

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._d.items()))
        return self._hash

    # -- ring operations --------------------------------------------------
    @staticmethod
    def _coerce(x):
        if isinstance(x, MtpExpression):
            return x
        if isinstance(x, (int, float)):
            return MtpExpression.constant(float(x))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        d = dict(self._d)
        for k, v in other._d.items():
            s = d.get(k, 0.0) + v
            if s == 0:
                d.pop(k, None)
            else:
                d[k] = s
        return MtpExpression._raw(d)

    __radd__ = __add__

    def __neg__(self):
        return MtpExpression._raw({k: -v for k, v in self._d.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            if other == 0:
                return MtpExpression()
            return MtpExpression._raw({k: v * other for k, v in self._d.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        d: dict = {}
        for k1, v1 in self._d.items():
            for k2, v2 in other._d.items():
                k = _mul_keys(k1, k2)
                d[k] = d.get(k, 0.0) + v1 * v2
        return MtpExpression._raw({k: v for k, v in d.items() if v != 0})

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, MtpExpression):
            if not other.is_constant():
                raise NonMtpError("division by a non-constant expression")
            other = other.constant_value()
        if other == 0:
            raise ZeroDivisionError("division by zero")
        return self * (1.0 / other)

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise NonMtpError("only nonnegative integer powers are allowed")
        result = MtpExpression.constant(1.0)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    # -- evaluation -------------------------------------------------------
    def evaluate(self, env: Mapping[str, object]):
        """Evaluate with ``env`` mapping root symbol names to numbers or arrays."""
        total = 0.0
        for k, coef in self._d.items():
            term = coef
            for sym, p, c, s in k:
                x = env[sym.root]
                if sym.is_derived:
                    x = sym.scale * x
                if p:
                    term = term * x ** p
                if c:
                    term = term * _cos(x) ** c
                if s:
                    term = term * _sin(x) ** s
            total = total + term
        return total

    def substitute(self, values: Mapping[str, float]) -> "MtpExpression":
        """Replace symbols (by root name) with numbers."""
        d: dict = {}
        for k, coef in self._d.items():
            kept = []
            for sym, p, c, s in k:
                if sym.root in values:
                    x = float(values[sym.root]) * sym.scale
                    coef *= x ** p * math.cos(x) ** c * math.sin(x) ** s
                else:
                    kept.append((sym, p, c, s))
            kk = tuple(kept)
            d[kk] = d.get(kk, 0.0) + coef
        return MtpExpression(d)

    def compose(self, mapping: Mapping[Symbol, "MtpExpression"]) -> "MtpExpression":
        """Substitute expressions for symbols; trig factors need linear images."""
        cache: dict = {}

        def factor_image(sym, kind):
            if (sym, kind) not in cache:
                img = mapping[sym]
                if kind == 0:
                    cache[(sym, 0)] = img
                else:
                    c, s = _cos_sin_of_linear(img, owner=sym)
                    cache[(sym, 1)], cache[(sym, 2)] = c, s
            return cache[(sym, kind)]

        pow_cache: dict = {}

        def powered(sym, kind, e):
            key = (sym, kind, e)
            if key not in pow_cache:
                pow_cache[key] = factor_image(sym, kind) ** e
            return pow_cache[key]

        out = MtpExpression()
        for k, coef in self._d.items():
            kept = []
            term = MtpExpression.constant(coef)
            for f in k:
                sym = f[0]
                if sym in mapping:
                    for kind in (0, 1, 2):
                        if f[kind + 1]:
                            term = term * powered(sym, kind, f[kind + 1])
                else:
                    kept.append(f)
            if kept:
                term = term * MtpExpression({tuple(kept): 1.0})
            out = out + term
        return out

    # -- text ---------------------------------------------------------------
    def __str__(self):
        if not self._d:
            return "0"
        parts = []
        for coef, key in self.terms:
            factors = []
            for sym, p, c, s in key:
                if p:
                    factors.append(sym.name if p == 1 else f"{sym.name}^{p}")
                for fn, e in (("cos", c), ("sin", s)):
                    if e:
                        factors.append(f"{fn}({sym.name})" if e == 1 else f"{fn}({sym.name})^{e}")
            body = "*".join(factors)
            if not body:
                parts.append(repr(coef))
            elif coef == 1.0:
                parts.append(body)
            elif coef == -1.0:
                parts.append("-" + body)
            else:
                parts.append(f"{coef!r}*{body}")
        text = " + ".join(parts)
        return text.replace("+ -", "- ")

    def __repr__(self):
        return f"MtpExpression({str(self)!r})"


def _cos(x):
    return math.cos(x) if isinstance(x, (int, float)) else np.cos(x)


def _sin(x):
    return math.sin(x) if isinstance(x, (int, float)) else np.sin(x)


def as_linear(expr: MtpExpression) -> tuple[list[tuple[Symbol, float]], float]:
    """Split a degree-1 trig-free expression into ``[(symbol, coef)], const``."""
    atoms = []
    const = 0.0
    for k, coef in expr.items():
        if not k:
            const += coef
        elif len(k) == 1 and k[0][1] == 1 and k[0][2] == 0 and k[0][3] == 0 and not k[0][0].is_derived:
            atoms.append((k[0][0], coef))
        else:
            raise NonMtpError(f"trigonometric argument is not linear: {expr}")
    atoms.sort(key=lambda a: a[0].sort_key)
    return atoms, const


def _cos_sin_of_linear(arg: MtpExpression, owner=None):
    try:
        atoms, const = as_linear(arg)
    except NonMtpError as exc:
        if owner is not None:
            raise NonMtpError(f"cannot expand trig of {owner.name} -> {arg}") from exc
        raise
    C = MtpExpression.constant(math.cos(const))
    S = MtpExpression.constant(math.sin(const))
    for sym, coef in atoms:
        sign = 1.0 if coef > 0 else -1.0
        mag = abs(coef)
        if mag != 1.0:
            if sym.tag == Tag.STATE:
                raise NonMtpError(f"trigonometric argument scales state {sym.name} by {coef}")
            target = sym.scaled(mag)
        else:
            target = sym
        ca = MtpExpression.cos(target)
        sa = MtpExpression.sin(target) * sign
        C, S = C * ca - S * sa, S * ca + C * sa
    return C, S


def angle_sum_expand(func: str, argument: MtpExpression) -> MtpExpression:
    """``cos``/``sin`` of a linear argument as single-symbol trig factors."""
    c, s = _cos_sin_of_linear(argument)
    if func == "cos":
        return c
    if func == "sin":
        return s
    raise ValueError(f"unknown trig function {func!r}")


def expect_noise(expr: MtpExpression, noise_env: Mapping) -> MtpExpression:
    """Replace every noise factor group by its (mixed trigonometric) moment.

    ``noise_env`` maps root noise symbols (or their names) to distributions.
    Distinct noise symbols are independent of each other and of the rest.
    """
    env = {(k.name if isinstance(k, Symbol) else k): v for k, v in noise_env.items()}
    out: dict = {}
    for key, coef in expr.items():
        kept = []
        groups: dict = {}
        for f in key:
            if f[0].tag == Tag.NOISE:
                groups.setdefault(f[0].root, []).append(f)
            else:
                kept.append(f)
        for root, facs in groups.items():
            if root not in env:
                raise MissingDistribution(root)
            coef *= _noise_factor_moment(env[root], facs)
            if coef == 0:
                break
        if coef == 0:
            continue
        kk = tuple(kept)
        out[kk] = out.get(kk, 0.0) + coef
    return MtpExpression(out)


def _noise_factor_moment(dist, facs) -> float:
    poly = 0
    cos_pow = sin_pow = 0
    trig_scales = set()
    for sym, p, c, s in facs:
        if p:
            # polynomial factors only ever sit on the root symbol
            poly += p
        if c or s:
            trig_scales.add(sym.scale)
            cos_pow += c
            sin_pow += s
    if len(trig_scales) > 1:
        raise NonMtpError(f"noise {facs[0][0].root} appears inside trig with several scales")
    scale = trig_scales.pop() if trig_scales else 1.0
    if scale == 1.0:
        return rv.mixed_trig_moment(dist, (poly, cos_pow, sin_pow))
    return scale ** (-poly) * rv.mixed_trig_moment(dist.affine(scale), (poly, cos_pow, sin_pow))


def grevlex_monomials(symbols, order: int) -> list[tuple[int, ...]]:
    """Exponent tuples of total degree ``order`` in moment-vector layout.

    Graded, and within a degree sorted by descending exponent tuple, so the
    first variable varies slowest: for two variables and order 3 this is
    ``(3,0), (2,1), (1,2), (0,3)``.
    """
    n = symbols if isinstance(symbols, int) else len(symbols)
    if order < 0:
        raise ValueError("order must be nonnegative")
    if n == 0:
        return [()] if order == 0 else []
    out = []
    for combo in combinations_with_replacement(range(n), order):
        e = [0] * n
        for i in combo:
            e[i] += 1
        out.append(tuple(e))
    out.sort(reverse=True)
    return out


def monomial_layout(n: int, alpha_max: int) -> list[tuple[int, ...]]:
    """All exponent tuples of orders 1..alpha_max, order by order."""
    return [e for a in range(1, alpha_max + 1) for e in grevlex_monomials(n, a)]


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)
_CONSTANTS = {"pi": math.pi}
_FUNCS = ("cos", "sin")


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos:].lstrip()[:1]!r}", len(text) - len(text[pos:].lstrip()), text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, table):
        self.text = text
        self.table = table
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, value=None):
        tok = self.tokens[self.i]
        if value is not None and tok[1] != value:
            raise ParseError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2], self.text)
        self.i += 1
        return tok

    def parse(self):
        e = self.additive()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2], self.text)
        return e

    def additive(self):
        e = self.multiplicative()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.multiplicative()
            e = e + rhs if op == "+" else e - rhs
        return e

    def multiplicative(self):
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            pos = self.peek()[2]
            rhs = self.unary()
            if op == "*":
                e = e * rhs
            else:
                if not rhs.is_constant():
                    raise NonMtpError(f"division by a non-constant expression at position {pos}")
                if rhs.constant_value() == 0:
                    raise ParseError("division by zero", pos, self.text)
                e = e / rhs.constant_value()
        return e

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("-", "+"):
            self.take()
            e = self.unary()
            return -e if tok[1] == "-" else e
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            tok = self.take()
            if tok[0] != "num":
                raise ParseError("exponent must be a nonnegative integer literal", tok[2], self.text)
            val = float(tok[1])
            if val != int(val) or val < 0:
                raise ParseError("exponent must be a nonnegative integer literal", tok[2], self.text)
            return base ** int(val)
        return base

    def atom(self):
        kind, value, pos = self.take()
        if kind == "num":
            return MtpExpression.constant(float(value))
        if kind == "id":
            if value in _FUNCS and self.peek()[1] == "(":
                self.take("(")
                arg = self.additive()
                self.take(")")
                try:
                    return angle_sum_expand(value, arg)
                except NonMtpError as exc:
                    raise NonMtpError(f"{exc} (in {value}(...) at position {pos})") from None
            if value in self.table:
                return MtpExpression.symbol(self.table[value])
            if value in _CONSTANTS:
                return MtpExpression.constant(_CONSTANTS[value])
            raise UnknownSymbol(f"unknown symbol {value!r}", pos, self.text)
        if kind == "op" and value == "(":
            e = self.additive()
            self.take(")")
            return e
        raise ParseError(f"unexpected {value or 'end of input'!r}", pos, self.text)


def parse(text: str, symbol_table: Mapping[str, Symbol] | Iterable[Symbol] = ()) -> MtpExpression:
    """Parse infix text (``+ - * / ^``, ``cos``, ``sin``, ``pi``) into canonical form."""
    if not isinstance(symbol_table, Mapping):
        symbol_table = {s.name: s for s in symbol_table}
    return _Parser(str(text), symbol_table).parse()


def parse_number(text) -> float:
    """Constant expression such as ``"pi/3 - 0.1"``."""
    if isinstance(text, (int, float)):
        return float(text)
    e = parse(text, {})
    return e.constant_value()
