"""Exploration algorithms that grow a library of simulated traces.

All of them are specification agnostic: they only look at outputs (OSE,
RRT) or not at all (UR, NR, RW, RG). Falsification is decided afterwards by
evaluating every stored trace against every formula (see :mod:`.bench`).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .models import Model, ModelSpec
from .signal import STEP, InputSignal, Signal

LEVEL_PROBS = (4 / 7, 2 / 7, 1 / 7)
DEGENERATE_RANGE = 1e-9

#: Control-node counts per total level for the nonuniform random sampler.
NR_NODE_COUNTS = {
    "integrator": (15, 15, 10, 8, 6, 5, 5, 4, 4, 3, 2),
    "at": (3, 3, 2, 2, 1, 1, 1),
    "cc": (10, 10, 8, 8, 4, 4),
}


# ---------------------------------------------------------------- data


class TraceLibrary:
    """Growing set of (input, output) pairs with running output envelopes.

    ``ub[t, i]`` / ``lb[t, i]`` are the largest / smallest value of output
    ``i`` at grid index ``t`` over all stored traces. ``costs[j]`` is the
    number of simulations spent when trace ``j`` was produced.
    """

    def __init__(self, spec: ModelSpec, capacity: int = 64):
        self.spec = spec
        self.inputs: list[InputSignal] = []
        self._out = np.empty((max(capacity, 1), spec.n_times, spec.n_outputs))
        # time-major mirror so that one target instant is a contiguous row
        self._by_time = np.empty((spec.n_times, spec.n_outputs, max(capacity, 1)))
        self._costs: list[float] = []
        self.ub = np.full((spec.n_times, spec.n_outputs), -np.inf)
        self.lb = np.full((spec.n_times, spec.n_outputs), np.inf)

    def __len__(self):
        return len(self.inputs)

    @property
    def outputs(self) -> np.ndarray:
        """View of the stored outputs, shape ``(entries, time, dim)``."""
        return self._out[: len(self.inputs)]

    @property
    def costs(self) -> np.ndarray:
        return np.asarray(self._costs, dtype=float)

    def add(self, u: InputSignal, values: np.ndarray, cost: float | None = None) -> int:
        n = len(self.inputs)
        if n == len(self._out):
            grown = np.empty((2 * n, *self._out.shape[1:]))
            grown[:n] = self._out
            self._out = grown
            mirror = np.empty((*self._by_time.shape[:2], 2 * n))
            mirror[:, :, :n] = self._by_time[:, :, :n]
            self._by_time = mirror
        self._out[n] = values
        self._by_time[:, :, n] = values
        np.maximum(self.ub, values, out=self.ub)
        np.minimum(self.lb, values, out=self.lb)
        self.inputs.append(u)
        self._costs.append(float(n + 1) if cost is None else float(cost))
        return n

    def at_times(self, time_index, dims) -> np.ndarray:
        """Stored values at the given instants, shape ``(k, len(dims), entries)``."""
        return self._by_time[:, :, : len(self.inputs)][time_index][:, dims]

    def output(self, j: int) -> Signal:
        return Signal(STEP, self._out[j], self.spec.output_dims)

    def entries(self):
        return [(u, self.output(j)) for j, u in enumerate(self.inputs)]


@dataclass(frozen=True)
class FeatureTarget:
    """``k`` points ``(values[j], times[j])`` in the output dims ``dims``."""

    dims: tuple[int, ...]
    values: np.ndarray
    time_index: np.ndarray
    step: float = STEP

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(b <= a for a, b in zip(dims, dims[1:])):
            raise ValueError("feature dims must be non-empty and strictly increasing")
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        tidx = np.atleast_1d(np.asarray(self.time_index, dtype=int))
        if values.shape != (len(tidx), len(dims)):
            raise ValueError("one value row per feature point")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "time_index", tidx)

    @property
    def level(self) -> int:
        return len(self.time_index)

    @property
    def times(self) -> np.ndarray:
        return self.time_index * self.step


@dataclass(frozen=True)
class ExploreParams:
    """Knobs shared by the exploration algorithms.

    ``gamma`` defaults to a quarter of each input range. ``n_seed`` is the
    number of uniform-random traces OSE starts from.
    """

    dims: tuple[int, ...] = (0,)
    level_probs: tuple[float, ...] = LEVEL_PROBS
    gamma: tuple[float, ...] | None = None
    cr: float = 0.5
    margin: float = 0.2
    seed: int = 0
    budget: int = 20000
    n_seed: int = 10

    def __post_init__(self):
        if abs(sum(self.level_probs) - 1.0) > 1e-9 or min(self.level_probs) < 0:
            raise ValueError("level probabilities must be non-negative and sum to 1")
        if not 0 < self.cr < 1:
            raise ValueError("crossover probability must lie in (0, 1)")
        if self.gamma is not None and min(self.gamma) <= 0:
            raise ValueError("Cauchy scale must be positive")
        if self.budget < 1:
            raise ValueError("budget must be positive")
        if self.margin < 0:
            raise ValueError("target margin must be non-negative")
        dims = tuple(self.dims)
        if not dims or any(b <= a for a, b in zip(dims, dims[1:])):
            raise ValueError("dims must be non-empty and strictly increasing")

    def scales(self, spec: ModelSpec) -> np.ndarray:
        if self.gamma is not None:
            return np.asarray(self.gamma, dtype=float)
        b = spec.bounds
        return (b[:, 1] - b[:, 0]) / 4.0

    def with_(self, **kw) -> "ExploreParams":
        return replace(self, **kw)


# ---------------------------------------------------------------- primitives


def ur_next(spec: ModelSpec, rng: np.random.Generator) -> InputSignal:
    """Uniform random segment values."""
    b = spec.bounds
    vals = rng.uniform(b[:, 0], b[:, 1], size=(spec.n_segments, spec.n_inputs))
    return spec.make_input(vals)


def cauchy_delta(v, gamma):
    """Inverse-CDF Cauchy draw for uniform ``v`` in ``[0, 1)``."""
    return gamma * np.tan(np.pi * (np.asarray(v) - 0.5))


def perturb(u: InputSignal, gamma, cr: float, rng: np.random.Generator) -> InputSignal:
    """Add a Cauchy disturbance to each segment value with probability ``cr``.

    Both random arrays are always drawn so the stream consumption does not
    depend on ``cr``. Results are clipped to the input bounds.
    """
    vals = u.segment_values
    mask = rng.random(vals.shape) < cr
    delta = cauchy_delta(rng.random(vals.shape), np.asarray(gamma, dtype=float))
    new = np.where(mask, vals + delta, vals)
    new = np.clip(new, u.bounds[:, 0], u.bounds[:, 1])
    return InputSignal(new, u.segment_duration, u.horizon, u.bounds)


def sample_level(rng: np.random.Generator, probs: Sequence[float]) -> int:
    cum = np.cumsum(probs)
    return int(min(np.searchsorted(cum, rng.random(), side="right"), len(probs) - 1)) + 1


def target_values(ub, lb, r, margin: float = 0.2):
    """Map uniform ``r`` onto ``[lb - margin*d, ub + margin*d]``, ``d = ub - lb``."""
    d = ub - lb
    return (1.0 + 2.0 * margin) * d * r + lb - margin * d


def gen_target(
    lib: TraceLibrary,
    k: int,
    dims: Sequence[int],
    rng: np.random.Generator,
    margin: float = 0.2,
) -> FeatureTarget:
    if len(lib) == 0:
        raise ValueError("cannot draw a target from an empty library")
    dims = list(dims)
    tidx = rng.integers(0, lib.ub.shape[0], size=k)
    r = rng.random((k, len(dims)))
    ub = lib.ub[tidx][:, dims]
    lb = lib.lb[tidx][:, dims]
    return FeatureTarget(tuple(dims), target_values(ub, lb, r, margin), tidx)


def feature_distances(outputs: np.ndarray, target: FeatureTarget, ub, lb) -> np.ndarray:
    """Normalized squared distance of every trace in ``outputs`` to ``target``."""
    dims = list(target.dims)
    t = target.time_index
    denom = np.maximum(ub[t][:, dims] - lb[t][:, dims], DEGENERATE_RANGE)
    sel = outputs[:, t][:, :, dims]
    return (((sel - target.values) / denom) ** 2).sum(axis=(1, 2))


def feature_distance(y, target: FeatureTarget, lib: TraceLibrary) -> float:
    values = y.values if isinstance(y, Signal) else np.asarray(y)
    return float(feature_distances(values[None], target, lib.ub, lib.lb)[0])


def library_distances(lib: TraceLibrary, target: FeatureTarget) -> np.ndarray:
    """Same as :func:`feature_distances` over the whole library, time-major."""
    dims = list(target.dims)
    t = target.time_index
    denom = np.maximum(lib.ub[t][:, dims] - lib.lb[t][:, dims], DEGENERATE_RANGE)
    sel = lib.at_times(t, dims)
    z = (sel - target.values[:, :, None]) / denom[:, :, None]
    return (z * z).sum(axis=(0, 1))


def select_nearest(lib: TraceLibrary, target: FeatureTarget) -> int:
    """Index of the closest stored trace; ties go to the earliest entry."""
    return int(np.argmin(library_distances(lib, target)))


# ---------------------------------------------------------------- nonuniform random


def nr_fractions(level: int) -> list[float]:
    """Grid fractions introduced at ``level``: {0, 1}, then odd multiples of 2^-level."""
    if level == 0:
        return [0.0, 1.0]
    return [(2 * j + 1) / 2**level for j in range(2 ** (level - 1))]


class NonuniformSampler:
    """Segment values on dyadic grids, coarser values exponentially more likely.

    A segment value picks a level and a fraction per input dimension; its
    total level ``L`` is the sum of the per-dimension levels and its weight is
    ``2**-L``. A signal first draws its total level from the marginal of that
    weighting, takes ``node_counts[L]`` equally long segments, and fills each
    with an independent value of total level at most ``L``.
    """

    def __init__(self, spec: ModelSpec, node_counts: Sequence[int]):
        self.spec = spec
        self.node_counts = tuple(node_counts)
        self.max_level = len(self.node_counts) - 1
        per_dim = [(l, p) for l in range(self.max_level + 1) for p in nr_fractions(l)]
        fracs, levels = [], []
        for combo in itertools.product(per_dim, repeat=spec.n_inputs):
            total = sum(l for l, _ in combo)
            if total <= self.max_level:
                levels.append(total)
                fracs.append([p for _, p in combo])
        order = np.argsort(levels, kind="stable")
        self.levels = np.asarray(levels)[order]
        self.fractions = np.asarray(fracs, dtype=float)[order]
        self.weights = 2.0 ** -self.levels.astype(float)
        self.prob = self.weights / self.weights.sum()
        self.level_prob = np.bincount(self.levels, weights=self.prob, minlength=self.max_level + 1)
        # values of total level <= L occupy the prefix [:upto[L]] after sorting
        self.upto = np.searchsorted(self.levels, np.arange(self.max_level + 1), side="right")

    def segment_values(self, idx) -> np.ndarray:
        b = self.spec.bounds
        return b[:, 0] + self.fractions[idx] * (b[:, 1] - b[:, 0])

    def draw_value_index(self, rng, level: int | None = None, size=None):
        n = len(self.levels) if level is None else self.upto[level]
        w = self.weights[:n]
        return rng.choice(n, size=size, p=w / w.sum())

    def __call__(self, rng: np.random.Generator) -> InputSignal:
        level = int(rng.choice(self.max_level + 1, p=self.level_prob))
        count = self.node_counts[level]
        idx = self.draw_value_index(rng, level, size=count)
        return InputSignal(
            self.segment_values(idx), self.spec.horizon / count, self.spec.horizon,
            self.spec.bounds,
        )


def nr_next(spec: ModelSpec, node_counts: Sequence[int], rng) -> InputSignal:
    return NonuniformSampler(spec, node_counts)(rng)


# ---------------------------------------------------------------- runs


def _simulate_into(lib: TraceLibrary, model: Model, u: InputSignal):
    lib.add(u, model.output_array(u))


def ur_run(model: Model, params: ExploreParams) -> TraceLibrary:
    rng = np.random.default_rng(params.seed)
    lib = TraceLibrary(model.spec, params.budget)
    while len(lib) < params.budget:
        _simulate_into(lib, model, ur_next(model.spec, rng))
    return lib


def nr_run(model: Model, params: ExploreParams, node_counts: Sequence[int] | None = None) -> TraceLibrary:
    """Nonuniform random sampling; repeated inputs are skipped and not charged."""
    rng = np.random.default_rng(params.seed)
    counts = node_counts or NR_NODE_COUNTS[model.spec.name]
    sampler = NonuniformSampler(model.spec, counts)
    lib = TraceLibrary(model.spec, params.budget)
    seen: set = set()
    draws = 0
    while len(lib) < params.budget and draws < 100 * params.budget:
        draws += 1
        u = sampler(rng)
        key = (u.segment_duration, u.segment_values.tobytes())
        if key in seen:
            continue
        seen.add(key)
        _simulate_into(lib, model, u)
    return lib


def ose_run(model: Model, params: ExploreParams) -> TraceLibrary:
    """Output space exploration driven by multi-point feature targets."""
    spec = model.spec
    rng = np.random.default_rng(params.seed)
    gamma = params.scales(spec)
    lib = TraceLibrary(spec, params.budget)
    for _ in range(min(params.n_seed, params.budget)):
        _simulate_into(lib, model, ur_next(spec, rng))
    while len(lib) < params.budget:
        k = sample_level(rng, params.level_probs)
        target = gen_target(lib, k, params.dims, rng, params.margin)
        parent = select_nearest(lib, target)
        _simulate_into(lib, model, perturb(lib.inputs[parent], gamma, params.cr, rng))
    return lib


def rw_run(model: Model, params: ExploreParams) -> TraceLibrary:
    """Random walk: keep perturbing the most recent input."""
    rng = np.random.default_rng(params.seed)
    gamma = params.scales(model.spec)
    lib = TraceLibrary(model.spec, params.budget)
    _simulate_into(lib, model, ur_next(model.spec, rng))
    while len(lib) < params.budget:
        _simulate_into(lib, model, perturb(lib.inputs[-1], gamma, params.cr, rng))
    return lib


def rg_select(n_entries: int, rng: np.random.Generator) -> int:
    return int(rng.integers(n_entries))


def rg_run(model: Model, params: ExploreParams) -> TraceLibrary:
    """Random graph: perturb a uniformly chosen earlier input."""
    rng = np.random.default_rng(params.seed)
    gamma = params.scales(model.spec)
    lib = TraceLibrary(model.spec, params.budget)
    _simulate_into(lib, model, ur_next(model.spec, rng))
    while len(lib) < params.budget:
        parent = rg_select(len(lib), rng)
        _simulate_into(lib, model, perturb(lib.inputs[parent], gamma, params.cr, rng))
    return lib


# ---------------------------------------------------------------- RRT


class RrtTree:
    """Tree of input prefixes; node ``j`` sits at time ``depth[j] * h``.

    ``value[j]`` is the output at the node's time instant. Full-length leaves
    (depth equal to the segment count) are also collected in ``leaves`` with
    their complete output traces.
    """

    def __init__(self, spec: ModelSpec, root_value: np.ndarray):
        self.spec = spec
        self.h = spec.segment_duration
        self.n_levels = spec.n_segments
        self.depth: list[int] = [0]
        self.parent: list[int] = [-1]
        self.segment: list[np.ndarray | None] = [None]
        self.value: list[np.ndarray] = [np.asarray(root_value, dtype=float)]
        self.cost: list[float] = [0.0]
        m = spec.n_outputs
        self._ids = [[0]] + [[] for _ in range(self.n_levels)]
        self._vals = [np.asarray(root_value, dtype=float)[None]] + [
            np.empty((0, m)) for _ in range(self.n_levels)
        ]
        self._count = [1] + [0] * self.n_levels
        self.leaves = TraceLibrary(spec)
        self.cost_used = 0.0

    def __len__(self):
        return len(self.depth)

    def time(self, node: int) -> float:
        return self.depth[node] * self.h

    def nodes_at(self, depth: int) -> list[int]:
        return self._ids[depth]

    def values_at(self, depth: int) -> np.ndarray:
        return self._vals[depth][: self._count[depth]]

    def envelope(self, depth: int):
        v = self.values_at(depth)
        return v.max(axis=0), v.min(axis=0)

    def prefix_input(self, node: int) -> InputSignal:
        segs = []
        while self.parent[node] >= 0:
            segs.append(self.segment[node])
            node = self.parent[node]
        segs.reverse()
        n = len(segs)
        horizon = min(n * self.h, self.spec.horizon)
        return InputSignal(np.array(segs).reshape(n, -1), self.h, horizon, self.spec.bounds)

    def add(self, parent: int, segment: np.ndarray, value: np.ndarray, cost: float) -> int:
        node = len(self.depth)
        d = self.depth[parent] + 1
        self.depth.append(d)
        self.parent.append(parent)
        self.segment.append(np.asarray(segment, dtype=float))
        self.value.append(np.asarray(value, dtype=float))
        self.cost.append(cost)
        self._ids[d].append(node)
        buf, c = self._vals[d], self._count[d]
        if c == len(buf):
            grown = np.empty((max(8, 2 * c), buf.shape[1]))
            grown[:c] = buf[:c]
            self._vals[d] = buf = grown
        buf[c] = value
        self._count[d] = c + 1
        return node

    def select(self, depth: int, target: np.ndarray) -> int:
        """Nearest node at ``depth`` under the envelope-normalized metric."""
        ub, lb = self.envelope(depth)
        denom = np.maximum(ub - lb, DEGENERATE_RANGE)
        d = (((self.values_at(depth) - target) / denom) ** 2).sum(axis=1)
        return self._ids[depth][int(np.argmin(d))]


def rrt_run(model: Model, params: ExploreParams, budget: float | None = None) -> RrtTree:
    """Classical RRT over ``Y x [0, T]`` with prefix re-simulation.

    Extending a node at time ``t`` re-simulates its prefix plus a new uniform
    segment and costs ``(t + h) / T`` simulations. ``budget`` defaults to
    ``params.budget``; the campaign runner passes twice the nominal budget.
    """
    spec = model.spec
    budget = params.budget if budget is None else budget
    rng = np.random.default_rng(params.seed)
    b = spec.bounds
    h, T = spec.segment_duration, spec.horizon
    probe = InputSignal(np.full((1, spec.n_inputs), b[:, 0]), h, min(h, T), b)
    root = model.output_array(probe)[0]
    tree = RrtTree(spec, root)
    used = 0.0
    while True:
        depth = int(rng.integers(0, tree.n_levels))
        while not tree.nodes_at(depth):
            depth -= 1
        ub, lb = tree.envelope(depth)
        target = target_values(ub, lb, rng.random(spec.n_outputs), params.margin)
        node = tree.select(depth, target)
        seg = rng.uniform(b[:, 0], b[:, 1])
        t_new = min((depth + 1) * h, T)
        cost = t_new / T
        if used + cost > budget + 1e-9:
            break
        head = tree.prefix_input(node).segment_values if depth else np.empty((0, spec.n_inputs))
        u = InputSignal(np.vstack([head, seg[None]]), h, t_new, b)
        out = model.output_array(u)
        used += cost
        tree.add(node, seg, out[-1], used)
        if depth + 1 == tree.n_levels:
            tree.leaves.add(u, out, cost=used)
    tree.cost_used = used
    return tree


EXPLORERS = {
    "ur": ur_run,
    "nr": nr_run,
    "rw": rw_run,
    "rg": rg_run,
    "ose": ose_run,
}


def run_explorer(name: str, model: Model, params: ExploreParams) -> tuple[TraceLibrary, float]:
    """Run algorithm ``name``; returns the full-length traces and the cost spent.

    RRT receives twice ``params.budget`` because its simulations are partial.
    """
    if name == "rrt":
        tree = rrt_run(model, params, 2 * params.budget)
        return tree.leaves, tree.cost_used
    try:
        fn = EXPLORERS[name]
    except KeyError:
        raise KeyError(f"unknown exploration algorithm {name!r}") from None
    lib = fn(model, params)
    return lib, float(len(lib))
