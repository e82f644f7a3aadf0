"""Signal Temporal Logic: syntax tree, parser and discrete-time robustness.

Concrete syntax::

    phi  := phi '=>' phi | phi 'or' phi | phi 'and' phi
          | 'not' phi | 'always' '[' a ',' b ']' phi
          | 'eventually' '[' a ',' b ']' phi | '(' phi ')' | atom
    atom := affine CMP number | 'abs' '(' affine ')' CMP number
    CMP  := '<' | '>' | '==' | '!='

Binding strength, tightest first: unary operators (``not``, ``always``,
``eventually``), ``and``, ``or``, ``=>``. Implication is right associative
and desugared into ``(not a) or b``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .signal import STEP, TIME_TOL, Signal

#: Robustness margin of ``==`` / ``!=`` atoms (half of a unit gear spacing).
EQ_MARGIN = 0.5
COMPARATORS = ("<", ">", "==", "!=")
_BOUND_QUANTUM = 0.01


class STLSyntaxError(ValueError):
    def __init__(self, msg: str, pos: int | None = None, text: str | None = None):
        self.pos = pos
        if pos is not None:
            msg = f"{msg} at position {pos}"
            if text is not None:
                msg += f": {text[:pos]}<here>{text[pos:]}"
        super().__init__(msg)


class STLEvalError(ValueError):
    pass


class Formula:
    """Base class of syntax tree nodes."""

    def __invert__(self):
        return Not(self)

    def __and__(self, other):
        return And(self, other)

    def __or__(self, other):
        return Or(self, other)

    def __str__(self):
        return pretty(self)


@dataclass(frozen=True)
class Atom(Formula):
    """``[abs](sum c*name + offset) CMP constant``."""

    terms: tuple[tuple[float, str], ...]
    comparator: str
    constant: float
    abs_flag: bool = False
    offset: float = 0.0

    def __post_init__(self):
        if not self.terms:
            raise ValueError("atom needs at least one term")
        if self.comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for _, n in self.terms)


@dataclass(frozen=True)
class Not(Formula):
    child: Formula


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Always(Formula):
    lo: float
    hi: float
    child: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    lo: float
    hi: float
    child: Formula


def Implies(a: Formula, b: Formula) -> Formula:
    return Or(Not(a), b)


def _check_interval(lo: float, hi: float, pos=None, text=None):
    if not 0 <= lo <= hi:
        raise STLSyntaxError(f"bad interval [{lo}, {hi}]", pos, text)
    for v in (lo, hi):
        q = v / _BOUND_QUANTUM
        if abs(q - round(q)) > 1e-6:
            raise STLSyntaxError(f"interval bound {v} is not a multiple of 0.01", pos, text)


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>=>|==|!=|<=|>=|[<>=()\[\],+\-*])
    """,
    re.VERBOSE,
)
_KEYWORDS = {"always", "eventually", "not", "and", "or", "abs"}


def _tokenize(text: str):
    toks, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise STLSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), pos))
        pos = m.end()
    toks.append(("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return STLSyntaxError(msg, tok[2], self.text)

    def expect(self, value):
        tok = self.next()
        if tok[1] != value:
            raise self.error(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok)
        return tok

    def parse(self) -> Formula:
        f = self.implies()
        if self.peek()[0] != "eof":
            raise self.error(f"unexpected {self.peek()[1]!r}")
        return f

    def implies(self):
        left = self.disj()
        if self.peek()[1] == "=>":
            self.next()
            return Implies(left, self.implies())
        return left

    def disj(self):
        f = self.conj()
        while self.peek()[1] == "or":
            self.next()
            f = Or(f, self.conj())
        return f

    def conj(self):
        f = self.unary()
        while self.peek()[1] == "and":
            self.next()
            f = And(f, self.unary())
        return f

    def unary(self):
        kind, val, _ = self.peek()
        if val == "not":
            self.next()
            return Not(self.unary())
        if val in ("always", "eventually"):
            self.next()
            start = self.peek()
            self.expect("[")
            lo = self.number()
            self.expect(",")
            hi = self.number()
            self.expect("]")
            _check_interval(lo, hi, start[2], self.text)
            cls = Always if val == "always" else Eventually
            return cls(lo, hi, self.unary())
        if val == "(":
            self.next()
            f = self.implies()
            self.expect(")")
            return f
        return self.atom()

    def number(self) -> float:
        sign = 1.0
        while self.peek()[1] in ("+", "-"):
            if self.next()[1] == "-":
                sign = -sign
        tok = self.next()
        if tok[0] != "num":
            raise self.error("expected a number", tok)
        return sign * float(tok[1])

    def atom(self):
        use_abs = False
        if self.peek()[1] == "abs":
            self.next()
            self.expect("(")
            use_abs = True
        terms, offset = self.affine()
        if use_abs:
            self.expect(")")
        tok = self.next()
        if tok[1] not in COMPARATORS:
            if tok[0] == "op" and tok[1] in ("<=", ">=", "="):
                raise self.error(f"unknown comparator {tok[1]!r}", tok)
            raise self.error(f"expected a comparator, found {tok[1] or 'end of input'!r}", tok)
        const = self.number()
        return Atom(tuple(terms), tok[1], const, use_abs, offset)

    def affine(self):
        terms: list[tuple[float, str]] = []
        offset = 0.0
        first = True
        while True:
            sign = 1.0
            tok = self.peek()
            if tok[1] in ("+", "-"):
                self.next()
                sign = -1.0 if tok[1] == "-" else 1.0
            elif not first:
                break
            tok = self.next()
            if tok[0] == "num":
                coef = sign * float(tok[1])
                if self.peek()[1] == "*":
                    self.next()
                    name = self.next()
                    if name[0] != "name" or name[1] in _KEYWORDS:
                        raise self.error("expected a signal name", name)
                    terms.append((coef, name[1]))
                else:
                    offset += coef
            elif tok[0] == "name" and tok[1] not in _KEYWORDS:
                terms.append((sign, tok[1]))
            else:
                raise self.error("expected a signal name or number", tok)
            first = False
        if not terms:
            raise self.error("atom has no signal terms")
        return terms, offset


def parse(text: str) -> Formula:
    """Parse formula text into a syntax tree."""
    return _Parser(text).parse()


# ---------------------------------------------------------------- printing

def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def _fmt_affine(atom: Atom) -> str:
    parts = []
    for i, (c, name) in enumerate(atom.terms):
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        body = name if mag == 1 else f"{_fmt(mag)}*{name}"
        if i == 0:
            parts.append(body if sign == "+" else f"-{body}")
        else:
            parts.append(f" {sign} {body}")
    if atom.offset:
        parts.append(f" {'-' if atom.offset < 0 else '+'} {_fmt(abs(atom.offset))}")
    return "".join(parts)


def pretty(f: Formula) -> str:
    """Fully parenthesized concrete syntax; ``parse(pretty(f)) == f``."""
    if isinstance(f, Atom):
        body = _fmt_affine(f)
        if f.abs_flag:
            body = f"abs({body})"
        return f"({body} {f.comparator} {_fmt(f.constant)})"
    if isinstance(f, Not):
        return f"(not {pretty(f.child)})"
    if isinstance(f, And):
        return f"({pretty(f.left)} and {pretty(f.right)})"
    if isinstance(f, Or):
        return f"({pretty(f.left)} or {pretty(f.right)})"
    if isinstance(f, Always):
        return f"(always[{_fmt(f.lo)},{_fmt(f.hi)}] {pretty(f.child)})"
    if isinstance(f, Eventually):
        return f"(eventually[{_fmt(f.lo)},{_fmt(f.hi)}] {pretty(f.child)})"
    raise TypeError(f"not a formula: {f!r}")


def horizon(f: Formula) -> float:
    """Time span needed beyond the evaluation instant."""
    if isinstance(f, Atom):
        return 0.0
    if isinstance(f, Not):
        return horizon(f.child)
    if isinstance(f, (And, Or)):
        return max(horizon(f.left), horizon(f.right))
    return f.hi + horizon(f.child)


def atoms(f: Formula):
    if isinstance(f, Atom):
        yield f
    elif isinstance(f, Not) or isinstance(f, (Always, Eventually)):
        yield from atoms(f.child)
    else:
        yield from atoms(f.left)
        yield from atoms(f.right)


# ---------------------------------------------------------------- robustness

def window_indices(lo: float, hi: float, step: float = STEP) -> tuple[int, int]:
    """Grid offsets covering ``[lo, hi]``, snapped outward."""
    return (
        int(math.floor(lo / step + TIME_TOL)),
        int(math.ceil(hi / step - TIME_TOL)),
    )


def _forward_window(xp, size, fn):
    # Window [j, j+size-1] for each j.
    return fn(xp, size=size, axis=1, mode="nearest", origin=-(size // 2))


def _sliding_min(x, a, b):
    return _sliding_op(x, a, b, minimum_filter1d)


def _sliding_max(x, a, b):
    return _sliding_op(x, a, b, maximum_filter1d)


def _sliding_op(x, a, b, fn):
    n = x.shape[1]
    w = b - a + 1
    xp = np.concatenate([x, np.repeat(x[:, -1:], b + 1, axis=1)], axis=1)
    g = _forward_window(xp, w, fn) if w > 1 else xp
    a = min(a, xp.shape[1] - n)
    return g[:, a:a + n]


def _affine(atom: Atom, values: np.ndarray, names: Sequence[str]) -> np.ndarray:
    e = np.full(values.shape[:2], atom.offset, dtype=float)
    for coef, name in atom.terms:
        try:
            idx = names.index(name)
        except ValueError:
            raise STLEvalError(
                f"formula refers to {name!r}, signal has {list(names)}"
            ) from None
        e = e + coef * values[:, :, idx]
    return np.abs(e) if atom.abs_flag else e


def _rob(f: Formula, values: np.ndarray, names, step) -> np.ndarray:
    if isinstance(f, Atom):
        e = _affine(f, values, names)
        c = f.constant
        if f.comparator == "<":
            return c - e
        if f.comparator == ">":
            return e - c
        if f.comparator == "==":
            return EQ_MARGIN - np.abs(e - c)
        return np.abs(e - c) - EQ_MARGIN
    if isinstance(f, Not):
        return -_rob(f.child, values, names, step)
    if isinstance(f, And):
        return np.minimum(_rob(f.left, values, names, step), _rob(f.right, values, names, step))
    if isinstance(f, Or):
        return np.maximum(_rob(f.left, values, names, step), _rob(f.right, values, names, step))
    if isinstance(f, Always):
        a, b = window_indices(f.lo, f.hi, step)
        return _sliding_min(_rob(f.child, values, names, step), a, b)
    if isinstance(f, Eventually):
        a, b = window_indices(f.lo, f.hi, step)
        return _sliding_max(_rob(f.child, values, names, step), a, b)
    raise TypeError(f"not a formula: {f!r}")


def robustness_signal(
    f: Formula, values: np.ndarray, dim_names: Sequence[str], step: float = STEP
) -> np.ndarray:
    """Robustness at every grid index for a batch of traces.

    ``values`` has shape ``(batch, n_times, n_dims)``; returns ``(batch, n_times)``.
    Windows reaching past the last sample are clamped to it.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[None]
    return _rob(f, values, list(dim_names), step)


def robustness_batch(f: Formula, values: np.ndarray, dim_names, step: float = STEP) -> np.ndarray:
    """Robustness at time 0 for each trace in a ``(batch, time, dim)`` array."""
    return robustness_signal(f, values, dim_names, step)[:, 0]


def robustness(f: Formula, y: Signal) -> float:
    return float(robustness_signal(f, y.values, y.dim_names, y.step)[0, 0])
