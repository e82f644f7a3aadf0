"""Benchmark registry, campaign runners and result files.

A campaign is a grid of cells. Exploration cells are (algorithm, repeat):
one library is grown and then checked against every formula. Optimization
cells are (algorithm, formula, repeat). Every cell gets its own seed derived
from a hash, so adding an algorithm never changes the other cells.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .explore import ExploreParams, TraceLibrary, run_explorer
from .models import Model, get_model
from .optimize import Objective, run_optimizer
from .signal import InputSignal
from .stl import Formula, horizon, parse, robustness_batch

SUITES = {"si": "integrator", "at": "at", "cc": "cc"}
EXPLORATION_ALGOS = ("ur", "nr", "rw", "rg", "rrt", "ose")
OPTIMIZATION_ALGOS = ("shc", "de", "cmaes")
CHECK_CHUNK = 4096


@dataclass(frozen=True)
class Benchmark:
    id: str
    model: str
    formula: str
    budget: int
    repeats: int = 10

    @property
    def ast(self) -> Formula:
        return parse(self.formula)

    def horizon_ok(self, T: float) -> bool:
        return horizon(self.ast) <= T + 1e-9


def load_registry(path=None) -> list[Benchmark]:
    """Read benchmark records; every formula is parsed up front."""
    if path is None:
        text = resources.files("voronoi_falsify").joinpath("data/benchmarks.json").read_text()
    else:
        text = Path(path).read_text()
    out = []
    for rec in json.loads(text):
        b = Benchmark(rec["id"], rec["model"], rec["formula"], int(rec["budget"]), int(rec.get("repeats", 10)))
        b.ast
        out.append(b)
    ids = [b.id for b in out]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate benchmark ids in registry")
    return out


def select(registry: Sequence[Benchmark], suite: str | None = None,
           ids: Iterable[str] | None = None) -> list[Benchmark]:
    if ids is not None:
        by_id = {b.id: b for b in registry}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise KeyError(f"unknown spec id(s): {', '.join(missing)}")
        return [by_id[i] for i in ids]
    if suite is None:
        return list(registry)
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}")
    return [b for b in registry if b.model == SUITES[suite]]


def cell_seed(base_seed: int, algorithm: str, spec: str, repeat: int) -> int:
    key = f"{base_seed}|{algorithm}|{spec}|{repeat}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


# ---------------------------------------------------------------- results


@dataclass
class Cell:
    algorithm: str
    spec: str
    repeat: int
    seed: int
    falsified: bool
    evals: float
    robustness: float
    witness: InputSignal | None = None
    error: str = ""


@dataclass
class CampaignResult:
    mode: str
    model: str
    algorithms: list[str]
    specs: list[str]
    repeats: int
    budget: int
    base_seed: int
    params: dict = field(default_factory=dict)
    cells: list[Cell] = field(default_factory=list)

    def __post_init__(self):
        self._sort()

    def _sort(self):
        ai = {a: i for i, a in enumerate(self.algorithms)}
        si = {s: i for i, s in enumerate(self.specs)}
        self.cells.sort(key=lambda c: (ai.get(c.algorithm, 1 << 30), si.get(c.spec, 1 << 30), c.repeat))

    def cell_budget(self, algorithm: str) -> float:
        return float(2 * self.budget if algorithm == "rrt" else self.budget)

    def cells_for(self, algorithm: str, spec: str | None = None) -> list[Cell]:
        return [c for c in self.cells if c.algorithm == algorithm and (spec is None or c.spec == spec)]

    def successes(self, algorithm: str, spec: str) -> int:
        return sum(c.falsified for c in self.cells_for(algorithm, spec))

    def success_sum(self, algorithm: str) -> int:
        return sum(c.falsified for c in self.cells_for(algorithm))

    def mean_evals(self, algorithm: str, spec: str) -> float:
        """Mean over all runs; failed runs count as the full budget."""
        cells = self.cells_for(algorithm, spec)
        return float(np.mean([c.evals for c in cells])) if cells else float("nan")

    def convergence(self, algorithm: str) -> list[tuple[float, int]]:
        """Cumulative number of falsified (spec, repeat) cells by simulations used."""
        hits = sorted(c.evals for c in self.cells_for(algorithm) if c.falsified)
        curve: list[tuple[float, int]] = []
        for i, e in enumerate(hits, 1):
            if curve and curve[-1][0] == e:
                curve[-1] = (e, i)
            else:
                curve.append((e, i))
        return curve


# ------------------------------------------------------------ exploration


def _resolve_model(model) -> Model:
    return get_model(model) if isinstance(model, str) else model


def check_library(lib: TraceLibrary, formulas: Sequence[Formula]) -> tuple[np.ndarray, list[int]]:
    """Minimum robustness per formula and index of the first falsifying trace (-1 if none)."""
    names = lib.spec.output_dims
    outs = lib.outputs
    mins = np.full(len(formulas), np.inf)
    first = [-1] * len(formulas)
    for k, f in enumerate(formulas):
        for start in range(0, len(outs), CHECK_CHUNK):
            rho = robustness_batch(f, outs[start:start + CHECK_CHUNK], names)
            mins[k] = min(mins[k], float(rho.min()))
            if first[k] < 0:
                neg = np.flatnonzero(rho < 0)
                if len(neg):
                    first[k] = start + int(neg[0])
    return mins, first


def _explore_cell(task) -> list[Cell]:
    algo, repeat, model_ref, specs, budget, base_seed, pdict = task
    seed = cell_seed(base_seed, algo, model_ref if isinstance(model_ref, str) else model_ref.spec.name, repeat)
    granted = float(2 * budget if algo == "rrt" else budget)
    try:
        model = _resolve_model(model_ref)
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in pdict.items()}
        params = ExploreParams(**kw, seed=seed, budget=budget)
        lib, _ = run_explorer(algo, model, params)
        formulas = [parse(b.formula) for b in specs]
        mins, first = check_library(lib, formulas)
    except Exception as exc:  # recorded per cell, the campaign goes on
        return [Cell(algo, b.id, repeat, seed, False, granted, float("nan"), error=f"{type(exc).__name__}: {exc}")
                for b in specs]
    costs = lib.costs
    cells = []
    for b, m, j in zip(specs, mins, first):
        if j >= 0:
            cells.append(Cell(algo, b.id, repeat, seed, True, float(costs[j]), float(m), lib.inputs[j]))
        else:
            cells.append(Cell(algo, b.id, repeat, seed, False, granted, float(m)))
    return cells


def _run_tasks(fn, tasks, jobs: int | None):
    jobs = 1 if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _picklable(model) -> bool:
    return isinstance(model, str)


def run_exploration_campaign(
    algorithms: Sequence[str],
    model,
    specs: Sequence[Benchmark],
    budget: int,
    repeats: int,
    base_seed: int = 0,
    params: ExploreParams | None = None,
    jobs: int | None = 1,
    replay: bool = True,
) -> CampaignResult:
    """Grow one library per (algorithm, repeat) and check it against all specs.

    RRT is granted twice the budget. Falsified cells keep the first
    falsifying input; with ``replay`` it is re-simulated and must still give
    a negative value.
    """
    model_name = model if isinstance(model, str) else model.spec.name
    if any(b.model != model_name for b in specs):
        raise ValueError("all specs of an exploration campaign must share the model")
    pdict = asdict(params or ExploreParams())
    pdict.pop("seed"), pdict.pop("budget")
    pdict = {k: (list(v) if isinstance(v, tuple) else v) for k, v in pdict.items()}
    tasks = [(a, r, model, list(specs), budget, base_seed, pdict) for a in algorithms for r in range(repeats)]
    out = _run_tasks(_explore_cell, tasks, jobs if _picklable(model) else 1)
    result = CampaignResult(
        "exploration", model_name, list(algorithms), [b.id for b in specs], repeats, budget,
        base_seed, params=pdict, cells=[c for cells in out for c in cells],
    )
    if replay:
        verify_witnesses(result, _resolve_model(model), specs)
    return result


# ----------------------------------------------------------- optimization


def _optimize_cell(task) -> Cell:
    algo, bench, repeat, model_ref, budget, base_seed = task
    seed = cell_seed(base_seed, algo, bench.id, repeat)
    try:
        model = _resolve_model(model_ref)
        res = run_optimizer(algo, Objective(model, bench.formula), budget, seed)
    except Exception as exc:
        return Cell(algo, bench.id, repeat, seed, False, float(budget), float("nan"),
                    error=f"{type(exc).__name__}: {exc}")
    if res.falsified:
        return Cell(algo, bench.id, repeat, seed, True, float(res.evaluations), res.best_robustness, res.best_input)
    return Cell(algo, bench.id, repeat, seed, False, float(budget), res.best_robustness)


def run_optimization_campaign(
    optimizers: Sequence[str],
    specs: Sequence[Benchmark],
    budget: int,
    repeats: int,
    base_seed: int = 0,
    model=None,
    jobs: int | None = 1,
    replay: bool = True,
) -> CampaignResult:
    """One optimizer run per (spec, repeat); failed runs record ``budget`` evaluations."""
    names = {b.model for b in specs}
    if model is None and len(names) > 1:
        raise ValueError("specs refer to several models; run one campaign per model")
    ref = model if model is not None else (names.pop() if names else "integrator")
    model_name = ref if isinstance(ref, str) else ref.spec.name
    tasks = [(a, b, r, ref, budget, base_seed) for a in optimizers for b in specs for r in range(repeats)]
    cells = _run_tasks(_optimize_cell, tasks, jobs if _picklable(ref) else 1)
    result = CampaignResult(
        "optimization", model_name, list(optimizers), [b.id for b in specs], repeats, budget,
        base_seed, params={}, cells=cells,
    )
    if replay:
        verify_witnesses(result, _resolve_model(ref), specs)
    return result


def replay_cell(cell: Cell, model: Model, formula) -> float:
    """Robustness of the stored witness after a fresh simulation."""
    f = parse(formula) if isinstance(formula, str) else formula
    y = model.output_array(cell.witness)
    return float(robustness_batch(f, y[None], model.spec.output_dims)[0])


def verify_witnesses(result: CampaignResult, model: Model, specs: Sequence[Benchmark]) -> None:
    by_id = {b.id: b for b in specs}
    for c in result.cells:
        if not c.falsified:
            continue
        rho = replay_cell(c, model, by_id[c.spec].formula)
        if not rho < 0:
            raise AssertionError(f"witness replay of {c.algorithm}/{c.spec}/{c.repeat} gave {rho}")


# ------------------------------------------------------------------- emit


def _num(x: float) -> str:
    if x != x:
        return "nan"
    return f"{x:.6f}"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def render(result: CampaignResult) -> dict[str, str]:
    """File name to content for every output of a campaign."""
    algos = result.algorithms
    files = {}
    files["success.csv"] = _csv_text(
        ["spec", *algos],
        [[s, *(result.successes(a, s) for a in algos)] for s in result.specs],
    )
    files["evals.csv"] = _csv_text(
        ["spec", *algos],
        [[s, *(_num(result.mean_evals(a, s)) for a in algos)] for s in result.specs],
    )
    files["convergence.csv"] = _csv_text(
        ["algorithm", "simulations", "falsified"],
        [[a, _num(e), n] for a in algos for e, n in result.convergence(a)],
    )
    files["raw.csv"] = _csv_text(
        ["algorithm", "spec", "repeat", "seed", "falsified", "evals", "robustness", "error"],
        [[c.algorithm, c.spec, c.repeat, c.seed, int(c.falsified), _num(c.evals), repr(float(c.robustness)), c.error]
         for c in result.cells],
    )
    witnesses = [
        {"algorithm": c.algorithm, "spec": c.spec, "repeat": c.repeat, "input": c.witness.to_json()}
        for c in result.cells if c.falsified and c.witness is not None
    ]
    files["witnesses.json"] = json.dumps(witnesses, indent=1, sort_keys=True) + "\n"
    manifest = {
        "mode": result.mode,
        "model": result.model,
        "algorithms": algos,
        "specs": result.specs,
        "repeats": result.repeats,
        "budget": result.budget,
        "budgets": {a: result.cell_budget(a) for a in algos},
        "base_seed": result.base_seed,
        "seed_rule": "sha256('base|algorithm|spec|repeat')[:8] little endian >> 1",
        "params": result.params,
        "version": __version__,
    }
    files["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    return files


def write_atomic(out_dir, files: dict[str, str]) -> Path:
    """Write all files into a staging directory, then move them into place."""
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out.parent))
    try:
        for name, text in files.items():
            p = stage / name
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text)
        out.mkdir(exist_ok=True)
        for name in files:
            dest = out / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(stage / name, dest)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return out


def emit(result: CampaignResult, out_dir) -> Path:
    return write_atomic(out_dir, render(result))


def read_success(path) -> dict[str, dict[str, int]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {r["spec"]: {k: int(v) for k, v in r.items() if k != "spec"} for r in rows}


# ------------------------------------------------------- library export


def export_library(lib: TraceLibrary, out_dir, seed: int, params: dict | None = None) -> Path:
    """Trace CSVs plus ``index.json`` listing inputs, costs, seed and parameters."""
    files = {}
    entries = []
    for j, u in enumerate(lib.inputs):
        name = f"traces/trace_{j:05d}.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        y = lib.outputs[j]
        w.writerow(["t", *lib.spec.output_dims])
        for i, row in enumerate(y):
            w.writerow([f"{i * 0.1:.10g}", *(repr(float(v)) for v in row)])
        files[name] = buf.getvalue()
        entries.append({"file": name, "cost": float(lib.costs[j]), "input": u.to_json()})
    index = {"model": lib.spec.to_json(), "seed": seed, "params": params or {}, "traces": entries}
    files["index.json"] = json.dumps(index, indent=1, sort_keys=True) + "\n"
    return write_atomic(out_dir, files)


def load_library_inputs(out_dir) -> list[InputSignal]:
    index = json.loads((Path(out_dir) / "index.json").read_text())
    return [InputSignal.from_json(e["input"]) for e in index["traces"]]
