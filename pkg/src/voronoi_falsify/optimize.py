"""Robustness minimization over the flattened segment values of an input.

Three baselines share one evaluation wrapper so that budgets, early exit on
the first negative value and the best-so-far history are handled the same
way everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .explore import cauchy_delta, perturb
from .models import Model
from .signal import STEP, InputSignal
from .stl import Formula, parse, robustness_batch

DE_POP = 50
DE_F = 0.5
DE_CR = 0.5
SHC_CR = 0.5
CMA_SIGMA0 = 0.3


class BoxObjective:
    """A scalar function on a box, with an exact evaluation counter."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float).ravel()
        self.upper = np.asarray(upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape or np.any(self.upper < self.lower):
            raise ValueError("bounds must have matching shapes with lower <= upper")
        self.evaluations = 0

    @property
    def dim(self) -> int:
        return len(self.lower)

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def decode(self, x):
        return self.clip(x)

    def evaluate(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def __call__(self, x) -> float:
        x = self.clip(x)
        self.evaluations += 1
        return float(self.evaluate(x))

    def perturb(self, x, rng: np.random.Generator, cr: float = SHC_CR) -> np.ndarray:
        """Cauchy step with scale ``range / 4`` on each coordinate w.p. ``cr``."""
        mask = rng.random(x.shape) < cr
        delta = cauchy_delta(rng.random(x.shape), (self.upper - self.lower) / 4.0)
        return self.clip(np.where(mask, x + delta, x))


class FunctionObjective(BoxObjective):
    def __init__(self, fn: Callable[[np.ndarray], float], lower, upper):
        super().__init__(lower, upper)
        self.fn = fn

    def evaluate(self, x):
        return self.fn(x)


class Objective(BoxObjective):
    """Robustness of ``formula`` on the trace produced by a decoded input.

    ``x`` is segment-major: ``x[j * n_inputs + d]`` is dimension ``d`` of
    segment ``j``. ``formula`` may also be a callable taking the output
    matrix, which is handy for sanity problems.
    """

    def __init__(self, model: Model, formula, step: float = STEP):
        spec = model.spec
        b = spec.bounds
        super().__init__(np.tile(b[:, 0], spec.n_segments), np.tile(b[:, 1], spec.n_segments))
        self.model = model
        self.spec = spec
        self.formula = parse(formula) if isinstance(formula, str) else formula
        self.step = step

    def decode(self, x) -> InputSignal:
        vals = self.clip(x).reshape(self.spec.n_segments, self.spec.n_inputs)
        return self.spec.make_input(vals)

    def encode(self, u: InputSignal) -> np.ndarray:
        return np.array(u.segment_values, dtype=float).ravel()

    def measure(self, y: np.ndarray) -> float:
        if isinstance(self.formula, Formula):
            names = self.spec.output_dims
            return float(robustness_batch(self.formula, y[None], names, self.step)[0])
        return float(self.formula(y))

    def evaluate(self, x):
        return self.measure(self.model.output_array(self.decode(x)))

    def perturb(self, x, rng, cr: float = SHC_CR):
        u = self.decode(x)
        gamma = (self.spec.bounds[:, 1] - self.spec.bounds[:, 0]) / 4.0
        return self.encode(perturb(u, gamma, cr, rng))


@dataclass
class OptResult:
    best_x: np.ndarray
    best_input: object
    best_robustness: float
    evaluations: int
    history: np.ndarray  # rows of (evaluation index, best so far)
    restarts: int = 0
    info: dict = field(default_factory=dict)

    @property
    def falsified(self) -> bool:
        return self.best_robustness < 0


class _Run:
    """Budget and best-so-far bookkeeping around an objective."""

    def __init__(self, obj: BoxObjective, budget: int):
        if budget < 1:
            raise ValueError("budget must be at least 1")
        self.obj = obj
        self.budget = int(budget)
        self.used = 0
        self.best_x = None
        self.best_f = math.inf
        self.trace: list[float] = []

    @property
    def done(self) -> bool:
        return self.used >= self.budget or self.best_f < 0

    def __call__(self, x) -> float:
        x = self.obj.clip(x)
        f = self.obj(x)
        self.used += 1
        if f < self.best_f or self.best_x is None:
            self.best_f, self.best_x = f, x.copy()
        self.trace.append(self.best_f)
        return f

    def batch(self, xs) -> np.ndarray:
        """Evaluate rows in order, stopping once the run is done.

        Unevaluated rows get ``inf`` so they are never selected.
        """
        out = np.full(len(xs), math.inf)
        for i, x in enumerate(xs):
            if self.done:
                break
            out[i] = self(x)
        return out

    def result(self, restarts: int = 0, **info) -> OptResult:
        hist = np.column_stack([np.arange(1, self.used + 1), np.asarray(self.trace)])
        return OptResult(
            best_x=self.best_x,
            best_input=self.obj.decode(self.best_x),
            best_robustness=self.best_f,
            evaluations=self.used,
            history=hist.reshape(-1, 2),
            restarts=restarts,
            info=info,
        )


def _uniform(obj: BoxObjective, rng, size=None) -> np.ndarray:
    shape = (obj.dim,) if size is None else (size, obj.dim)
    return rng.uniform(obj.lower, obj.upper, size=shape)


# ------------------------------------------------------------------- SHC


def shc_run(obj: BoxObjective, budget: int, seed=0, cr: float = SHC_CR) -> OptResult:
    """Stochastic hill climbing; a step is kept when it is not worse."""
    rng = np.random.default_rng(seed)
    run = _Run(obj, budget)
    x = obj.clip(_uniform(obj, rng))
    fx = run(x)
    accepted = 0
    while not run.done:
        cand = obj.perturb(x, rng, cr)
        fc = run(cand)
        if fc <= fx:
            x, fx = cand, fc
            accepted += 1
    return run.result(accepted=accepted)


# -------------------------------------------------------------------- DE


def de_mutants(pop: np.ndarray, best: int, F: float, rng: np.random.Generator) -> np.ndarray:
    """``x_best + F (x_r1 - x_r2)`` with distinct ``r1, r2`` different from the target."""
    n = len(pop)
    if n < 3:
        raise ValueError("DE needs a population of at least 3")
    out = np.empty_like(pop)
    idx = np.arange(n)
    for i in range(n):
        r1, r2 = rng.choice(np.delete(idx, i), 2, replace=False)
        out[i] = pop[best] + F * (pop[r1] - pop[r2])
    return out


def binomial_crossover(target: np.ndarray, mutant: np.ndarray, cr: float, rng) -> np.ndarray:
    n, d = target.shape
    take = rng.random((n, d)) < cr
    take[np.arange(n), rng.integers(d, size=n)] = True
    return np.where(take, mutant, target)


def de_run(obj: BoxObjective, budget: int, seed=0, pop_size: int = DE_POP,
           F: float = DE_F, cr: float = DE_CR) -> OptResult:
    """DE/best/1/bin with clipped mutants and greedy (``<=``) replacement."""
    if budget < pop_size:
        raise ValueError(f"DE budget must be at least the population size {pop_size}")
    rng = np.random.default_rng(seed)
    run = _Run(obj, budget)
    pop = _uniform(obj, rng, pop_size)
    fit = run.batch(pop)
    gens = 0
    while not run.done:
        best = int(np.argmin(fit))
        mutants = obj.clip(de_mutants(pop, best, F, rng))
        trials = binomial_crossover(pop, mutants, cr, rng)
        tfit = run.batch(trials)
        keep = tfit <= fit
        pop[keep], fit[keep] = trials[keep], tfit[keep]
        gens += 1
    return run.result(generations=gens)


# ---------------------------------------------------------------- CMA-ES


class _CMAState:
    """Standard (mu/mu_w, lambda) defaults for an ``n``-dimensional search."""

    def __init__(self, n: int, mean: np.ndarray, sigma: float):
        self.n = n
        self.lam = 4 + int(math.floor(3 * math.log(n)))
        self.mu = self.lam // 2
        w = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights ** 2)
        mueff = self.mueff
        self.cs = (mueff + 2) / (n + mueff + 5)
        self.ds = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + self.cs
        self.cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        self.c1 = 2 / ((n + 1.3) ** 2 + mueff)
        self.cmu = min(1 - self.c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        self.chin = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.mean = mean.astype(float)
        self.sigma = sigma
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.ps = np.zeros(n)
        self.pc = np.zeros(n)
        self.gen = 0
        self.best_hist: list[float] = []

    def ask(self, rng) -> np.ndarray:
        z = rng.standard_normal((self.lam, self.n))
        return self.mean + self.sigma * (z * self.D) @ self.B.T

    def tell(self, xs: np.ndarray, fit: np.ndarray):
        n = self.n
        order = np.argsort(fit, kind="stable")[: self.mu]
        ys = (xs[order] - self.mean) / self.sigma
        ymean = self.weights @ ys
        self.mean = self.mean + self.sigma * ymean
        inv_sqrt = self.B @ np.diag(1.0 / self.D) @ self.B.T
        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * (inv_sqrt @ ymean)
        self.gen += 1
        norm_ps = np.linalg.norm(self.ps)
        hs = norm_ps / math.sqrt(1 - (1 - self.cs) ** (2 * self.gen)) < (1.4 + 2 / (n + 1)) * self.chin
        self.pc = (1 - self.cc) * self.pc + hs * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * ymean
        rank_mu = (ys.T * self.weights) @ ys
        self.C = (
            (1 - self.c1 - self.cmu) * self.C
            + self.c1 * (np.outer(self.pc, self.pc) + (1 - hs) * self.cc * (2 - self.cc) * self.C)
            + self.cmu * rank_mu
        )
        self.sigma *= math.exp(min(1.0, (self.cs / self.ds) * (norm_ps / self.chin - 1)))
        self.C = (self.C + self.C.T) / 2
        vals, vecs = np.linalg.eigh(self.C)
        self.D = np.sqrt(np.maximum(vals, 1e-300))
        self.B = vecs
        self.best_hist.append(float(np.min(fit)))

    def stop_reason(self, fit: np.ndarray) -> str | None:
        finite = fit[np.isfinite(fit)]
        if len(finite) == len(fit) and finite.max() - finite.min() <= 1e-12:
            return "flatfitness"
        if self.sigma * max(np.max(self.D), 1e-300) < 1e-8:
            return "tolx"
        window = 10 + int(math.ceil(30 * self.n / self.lam))
        if len(self.best_hist) >= window:
            recent = self.best_hist[-window:]
            if max(recent) - min(recent) <= 1e-11 and finite.max() - finite.min() <= 1e-11:
                return "tolfun"
        if np.max(self.D) > 1e7 * np.min(self.D):
            return "conditioncov"
        return None


def cmaes_run(obj: BoxObjective, budget: int, seed=0, sigma0: float = CMA_SIGMA0) -> OptResult:
    """CMA-ES on the unit cube with restarts from fresh uniform means.

    Samples are clipped to the cube before evaluation and the clipped points
    are the ones fed back into the update.
    """
    rng = np.random.default_rng(seed)
    n = obj.dim
    span = obj.upper - obj.lower
    lam = 4 + int(math.floor(3 * math.log(n)))
    if budget < lam:
        raise ValueError(f"CMA-ES budget must be at least the population size {lam}")
    run = _Run(obj, budget)
    restarts = 0
    means, reasons = [], []
    state = _CMAState(n, rng.random(n), sigma0)
    while not run.done:
        zs = np.clip(state.ask(rng), 0.0, 1.0)
        fit = run.batch(obj.lower + zs * span)
        if run.done:
            break
        state.tell(zs, fit)
        reason = state.stop_reason(fit)
        if reason is not None:
            means.append(obj.lower + state.mean * span)
            reasons.append(reason)
            restarts += 1
            state = _CMAState(n, rng.random(n), sigma0)
    means.append(obj.lower + state.mean * span)
    return run.result(restarts=restarts, means=means, stop_reasons=reasons, popsize=lam)


OPTIMIZERS = {"shc": shc_run, "de": de_run, "cmaes": cmaes_run}


def run_optimizer(name: str, obj: BoxObjective, budget: int, seed=0) -> OptResult:
    try:
        fn = OPTIMIZERS[name]
    except KeyError:
        raise KeyError(f"unknown optimizer {name!r}") from None
    return fn(obj, budget, seed)
