"""Reference evaluators written from the semantics, independent of the package.

Formulas are nested tuples so nothing here touches the library's parser or
syntax tree. Signals are dicts of plain Python lists.
"""

import math
import random

STEP = 0.1


def window(lo, hi, t, n):
    a = int(math.floor(lo / STEP + 1e-9))
    b = int(math.ceil(hi / STEP - 1e-9))
    return [min(t + k, n - 1) for k in range(a, b + 1)]


def affine(node, sig, t):
    _, terms, use_abs, offset, _, _ = node
    e = offset + sum(c * sig[name][t] for c, name in terms)
    return abs(e) if use_abs else e


def rob(node, sig, t, n):
    kind = node[0]
    if kind == "atom":
        e = affine(node, sig, t)
        cmp, c = node[4], node[5]
        if cmp == "<":
            return c - e
        if cmp == ">":
            return e - c
        if cmp == "==":
            return 0.5 - abs(e - c)
        return abs(e - c) - 0.5
    if kind == "not":
        return -rob(node[1], sig, t, n)
    if kind == "and":
        return min(rob(node[1], sig, t, n), rob(node[2], sig, t, n))
    if kind == "or":
        return max(rob(node[1], sig, t, n), rob(node[2], sig, t, n))
    if kind == "implies":
        return max(-rob(node[1], sig, t, n), rob(node[2], sig, t, n))
    vals = [rob(node[3], sig, s, n) for s in window(node[1], node[2], t, n)]
    return min(vals) if kind == "always" else max(vals)


def sat(node, sig, t, n):
    kind = node[0]
    if kind == "atom":
        e = affine(node, sig, t)
        cmp, c = node[4], node[5]
        return {"<": e < c, ">": e > c, "==": e == c, "!=": e != c}[cmp]
    if kind == "not":
        return not sat(node[1], sig, t, n)
    if kind == "and":
        return sat(node[1], sig, t, n) and sat(node[2], sig, t, n)
    if kind == "or":
        return sat(node[1], sig, t, n) or sat(node[2], sig, t, n)
    if kind == "implies":
        return (not sat(node[1], sig, t, n)) or sat(node[2], sig, t, n)
    vals = [sat(node[3], sig, s, n) for s in window(node[1], node[2], t, n)]
    return all(vals) if kind == "always" else any(vals)


class SignalCache:
    """Memoized per-time evaluation so nested windows stay cheap."""

    def __init__(self, sig, n):
        self.sig, self.n = sig, n
        self.memo = {}

    def rob_all(self, node):
        key = ("r", id(node))
        if key not in self.memo:
            kind = node[0]
            n = self.n
            if kind in ("always", "eventually"):
                child = self.rob_all(node[3])
                op = min if kind == "always" else max
                out = [op(child[s] for s in window(node[1], node[2], t, n)) for t in range(n)]
            elif kind == "not":
                out = [-v for v in self.rob_all(node[1])]
            elif kind in ("and", "or", "implies"):
                a, b = self.rob_all(node[1]), self.rob_all(node[2])
                if kind == "and":
                    out = [min(x, y) for x, y in zip(a, b)]
                elif kind == "or":
                    out = [max(x, y) for x, y in zip(a, b)]
                else:
                    out = [max(-x, y) for x, y in zip(a, b)]
            else:
                out = [rob(node, self.sig, t, n) for t in range(n)]
            self.memo[key] = (node, out)
        return self.memo[key][1]

    def sat_all(self, node):
        key = ("s", id(node))
        if key not in self.memo:
            kind = node[0]
            n = self.n
            if kind in ("always", "eventually"):
                child = self.sat_all(node[3])
                op = all if kind == "always" else any
                out = [op(child[s] for s in window(node[1], node[2], t, n)) for t in range(n)]
            elif kind == "not":
                out = [not v for v in self.sat_all(node[1])]
            elif kind in ("and", "or", "implies"):
                a, b = self.sat_all(node[1]), self.sat_all(node[2])
                if kind == "and":
                    out = [x and y for x, y in zip(a, b)]
                elif kind == "or":
                    out = [x or y for x, y in zip(a, b)]
                else:
                    out = [(not x) or y for x, y in zip(a, b)]
            else:
                out = [sat(node, self.sig, t, n) for t in range(n)]
            self.memo[key] = (node, out)
        return self.memo[key][1]


# ---------------------------------------------------------------- generators

CONT_DIMS = ("x", "z")
INT_DIMS = ("g",)


def random_signal(rng: random.Random, n: int):
    sig = {d: [rng.gauss(0, 2) for _ in range(n)] for d in CONT_DIMS}
    sig["g"] = [float(rng.randint(1, 4)) for _ in range(n)]
    return sig


def _num(rng, lo, hi, digits=2):
    v = round(rng.uniform(lo, hi), digits)
    # keep continuous comparisons away from exact ties on integer data
    if v == int(v):
        v += 0.25
    return v


def _atom(rng):
    if rng.random() < 0.3:
        cmp = rng.choice(["==", "!=", "<", ">"])
        c = float(rng.randint(1, 4)) if cmp in ("==", "!=") else _num(rng, 0.5, 4.5)
        node = ("atom", ((1.0, "g"),), False, 0.0, cmp, c)
        return node, f"g {cmp} {c!r}"
    cmp = rng.choice(["<", ">"])
    nterms = rng.randint(1, 2)
    names = rng.sample(CONT_DIMS, nterms)
    terms = tuple((_num(rng, -2, 2), nm) for nm in names)
    offset = _num(rng, -3, 3) if rng.random() < 0.4 else 0.0
    use_abs = rng.random() < 0.3
    c = _num(rng, -3, 3)
    body = " ".join(f"{'+' if k else ''}{coef!r}*{nm}".replace("+-", "- ") for k, (coef, nm) in enumerate(terms))
    if offset:
        body += f" + {offset!r}" if offset > 0 else f" - {-offset!r}"
    text = f"abs({body}) {cmp} {c!r}" if use_abs else f"{body} {cmp} {c!r}"
    return ("atom", terms, use_abs, offset, cmp, c), text


def _interval(rng):
    a = round(rng.uniform(0, 3), rng.choice([1, 2]))
    b = round(a + rng.uniform(0, 3), rng.choice([1, 2]))
    return a, max(a, b)


def random_formula(rng: random.Random, depth: int):
    """A (tuple tree, text) pair of nesting depth at most ``depth``."""
    if depth <= 1 or rng.random() < 0.25:
        node, text = _atom(rng)
        return node, f"({text})"
    kind = rng.choice(["not", "and", "or", "implies", "always", "eventually", "always", "eventually"])
    if kind == "not":
        c, t = random_formula(rng, depth - 1)
        return ("not", c), f"(not {t})"
    if kind in ("and", "or", "implies"):
        a, ta = random_formula(rng, depth - 1)
        b, tb = random_formula(rng, depth - 1)
        op = {"and": "and", "or": "or", "implies": "=>"}[kind]
        return (kind, a, b), f"({ta} {op} {tb})"
    lo, hi = _interval(rng)
    c, t = random_formula(rng, depth - 1)
    return (kind, lo, hi, c), f"({kind}[{lo!r},{hi!r}] {t})"
