"""Command line front end: ``vf falsify|bench|monitor|list-specs|simulate``.

Exit status is 0 on success (all specs falsified for ``falsify``, positive
robustness for ``monitor``), 1 for a negative outcome and 2 for any error.
Options may also come from a JSON file given with ``--config``; flags win.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import shlex
import sys
from pathlib import Path

import numpy as np

from . import bench
from .explore import ExploreParams, run_explorer
from .models import BUILTIN_MODELS, ExternalModel, Model, ModelError, get_model
from .optimize import DE_POP, Objective, run_optimizer
from .signal import STEP, InputSignal, Signal, SignalError
from .stl import STLEvalError, STLSyntaxError, parse, robustness

EXPLORERS = bench.EXPLORATION_ALGOS
OPTIMIZERS = bench.OPTIMIZATION_ALGOS

# Values used when neither a flag nor the config file sets an option.
DEFAULTS = {
    "model": None,
    "external": None,
    "spec": None,
    "formula": None,
    "spec_file": None,
    "algo": "ose",
    "algos": None,
    "suite": "si",
    "mode": "exploration",
    "budget": None,
    "repeats": None,
    "seed": None,
    "out": None,
    "jobs": None,
    "dims": None,
    "levels": None,
    "gamma": None,
    "cr": None,
    "input": None,
}


class UsageError(ValueError):
    pass


def _csv_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(sp):
        sp.add_argument("--config", help="JSON file with option values")
        sp.add_argument("--seed", type=int, default=S, help="base seed (fallback: $VF_SEED, then 0)")
        sp.add_argument("--out", default=S, help="output directory")

    def explore_knobs(sp):
        sp.add_argument("--dims", type=_csv_ints, default=S, help="output dims used by OSE targets")
        sp.add_argument("--levels", type=_csv_floats, default=S, help="level probabilities")
        sp.add_argument("--gamma", type=_csv_floats, default=S, help="Cauchy scale per input")
        sp.add_argument("--cr", type=float, default=S, help="per-segment perturbation probability")

    f = sub.add_parser("falsify", help="run one algorithm against one or more specs")
    common(f)
    f.add_argument("--model", default=S, help="built-in model name")
    f.add_argument("--external", default=S, help="command of an external model process")
    f.add_argument("--spec", action="append", default=S, help="benchmark id (repeatable)")
    f.add_argument("--formula", action="append", default=S, help="inline STL formula (repeatable)")
    f.add_argument("--spec-file", default=S, help="file with one formula per line")
    f.add_argument("--algo", default=S, choices=EXPLORERS + OPTIMIZERS)
    f.add_argument("--budget", type=int, default=S)
    explore_knobs(f)

    b = sub.add_parser("bench", help="run a campaign and write result tables")
    common(b)
    b.add_argument("--suite", default=S, choices=sorted(bench.SUITES))
    b.add_argument("--spec", action="append", default=S, help="restrict to these ids")
    b.add_argument("--mode", default=S, choices=("exploration", "optimization"))
    b.add_argument("--algos", default=S, help="comma separated algorithm list")
    b.add_argument("--budget", type=int, default=S)
    b.add_argument("--repeats", type=int, default=S)
    b.add_argument("--jobs", type=int, default=S, help="worker processes (default: all cores)")
    explore_knobs(b)

    m = sub.add_parser("monitor", help="robustness of a stored trace")
    m.add_argument("trace", help="trace CSV with header t,<dims>")
    m.add_argument("formula", help="formula text or benchmark id")

    ls = sub.add_parser("list-specs", help="print the benchmark registry")
    ls.add_argument("--suite", choices=sorted(bench.SUITES))

    s = sub.add_parser("simulate", help="simulate one input and write the trace")
    common(s)
    s.add_argument("--model", default=S)
    s.add_argument("--external", default=S)
    s.add_argument("--input", default=S, help="input JSON (default: uniform random from --seed)")
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags, in that order."""
    opts = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(k.replace("-", "_") for k in cfg) - set(DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        for k, v in cfg.items():
            opts[k.replace("-", "_")] = v
    for k, v in vars(args).items():
        if k in DEFAULTS:
            opts[k] = v
    if opts["seed"] is None:
        env = os.environ.get("VF_SEED")
        try:
            opts["seed"] = int(env) if env else 0
        except ValueError:
            raise UsageError(f"VF_SEED must be an integer, got {env!r}") from None
    for key in ("spec", "formula"):
        if isinstance(opts[key], str):
            opts[key] = [opts[key]]
    for key in ("dims", "levels", "gamma"):
        if isinstance(opts[key], str):
            opts[key] = _csv_floats(opts[key])
    return opts


def explore_params(opts: dict) -> ExploreParams:
    kw = {}
    if opts["dims"] is not None:
        kw["dims"] = tuple(int(d) for d in opts["dims"])
    if opts["levels"] is not None:
        kw["level_probs"] = tuple(float(x) for x in opts["levels"])
    if opts["gamma"] is not None:
        kw["gamma"] = tuple(float(x) for x in opts["gamma"])
    if opts["cr"] is not None:
        kw["cr"] = float(opts["cr"])
    return ExploreParams(**kw)


def _check_params(params: ExploreParams, model: Model):
    spec = model.spec
    if max(params.dims) >= spec.n_outputs:
        raise UsageError(f"dims {params.dims} out of range for {spec.n_outputs} outputs")
    if params.gamma is not None and len(params.gamma) != spec.n_inputs:
        raise UsageError(f"gamma needs {spec.n_inputs} values")


def _open_model(opts: dict) -> Model:
    if opts["external"]:
        if not opts["model"]:
            raise UsageError("--external needs --model to name the interface (inputs, outputs, T, h)")
        spec = get_model(opts["model"]).spec
        return ExternalModel(shlex.split(opts["external"]), spec)
    if not opts["model"]:
        raise UsageError("--model is required")
    if opts["model"] not in BUILTIN_MODELS:
        raise UsageError(f"unknown model {opts['model']!r}; choose from {', '.join(BUILTIN_MODELS)}")
    return get_model(opts["model"])


def _specs(opts: dict, model_name: str | None) -> list[bench.Benchmark]:
    out = []
    if opts["spec"]:
        try:
            out += bench.select(bench.load_registry(), ids=opts["spec"])
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
    texts = list(opts["formula"] or [])
    if opts["spec_file"]:
        try:
            lines = Path(opts["spec_file"]).read_text().splitlines()
        except OSError as exc:
            raise UsageError(f"cannot read spec file: {exc}") from None
        texts += [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    for i, text in enumerate(texts, 1):
        parse(text)
        out.append(bench.Benchmark(f"F{i}", model_name or "", text, 0))
    if not out:
        raise UsageError("no specification given (use --spec, --formula or --spec-file)")
    return out


def _signal_csv(sig: Signal) -> str:
    buf = io.StringIO()
    buf.write("t," + ",".join(sig.dim_names) + "\n")
    for t, row in zip(sig.times, sig.values):
        buf.write(f"{t:.10g}," + ",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def cmd_falsify(opts: dict) -> int:
    model = _open_model(opts)
    try:
        specs = _specs(opts, model.spec.name)
        foreign = [b.id for b in specs if b.budget and b.model != model.spec.name]
        if foreign:
            raise UsageError(f"spec(s) {', '.join(foreign)} belong to another model")
        algo = opts["algo"]
        if algo not in EXPLORERS + OPTIMIZERS:
            raise UsageError(f"unknown algorithm {algo!r}")
        budget = opts["budget"]
        if budget is None:
            # registry budget for exploration, a fixed default otherwise
            registered = [b.budget for b in specs if b.budget]
            budget = 2500 if algo in OPTIMIZERS else max(registered, default=20000)
        budget = int(budget)
        if budget < 1:
            raise UsageError("budget must be positive")
        seed = int(opts["seed"])
        formulas = [parse(b.formula) for b in specs]
        if algo in EXPLORERS:
            params = explore_params(opts).with_(seed=seed, budget=budget)
            _check_params(params, model)
            lib, _ = run_explorer(algo, model, params)
            mins, first = bench.check_library(lib, formulas)
            rows = []
            for b, f, m, j in zip(specs, formulas, mins, first):
                if j >= 0:
                    y = lib.output(j)
                    rows.append((b, True, float(robustness(f, y)), float(lib.costs[j]), lib.inputs[j], y))
                else:
                    rows.append((b, False, float(m), float(budget), None, None))
        else:
            if algo == "de" and budget < DE_POP:
                raise UsageError(f"DE needs a budget of at least {DE_POP}")
            rows = []
            for b, f in zip(specs, formulas):
                obj = Objective(model, f)
                res = run_optimizer(algo, obj, budget, bench.cell_seed(seed, algo, b.id, 0))
                if res.falsified:
                    u = res.best_input
                    rows.append((b, True, res.best_robustness, float(res.evaluations), u, model.simulate(u).output))
                else:
                    rows.append((b, False, res.best_robustness, float(budget), None, None))
    finally:
        model.close()
    files = {}
    for b, hit, rho, evals, u, y in rows:
        verdict = "FALSIFIED" if hit else "not falsified"
        print(f"{b.id}: {verdict} robustness={rho:.6f} simulations={evals:g}")
        if hit:
            print(f"  witness segments: {json.dumps(u.segment_values.tolist())}")
            files[f"{b.id}_witness.csv"] = _signal_csv(y)
            files[f"{b.id}_input.json"] = json.dumps(u.to_json(), indent=1) + "\n"
    if files:
        out = bench.write_atomic(opts["out"] or "falsify-out", files)
        print(f"witness files written to {out}")
    return 0 if all(r[1] for r in rows) else 1


def cmd_bench(opts: dict) -> int:
    mode = opts["mode"]
    suite = opts["suite"]
    registry = bench.load_registry()
    try:
        specs = bench.select(registry, suite, opts["spec"])
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    if not specs:
        raise UsageError("no specs selected")
    default_algos = EXPLORERS if mode == "exploration" else OPTIMIZERS
    algos = opts["algos"] or ",".join(default_algos)
    algos = [a.strip() for a in (algos.split(",") if isinstance(algos, str) else algos)]
    bad = [a for a in algos if a not in default_algos]
    if bad:
        raise UsageError(f"algorithm(s) {', '.join(bad)} not available in {mode} mode")
    repeats = int(opts["repeats"] if opts["repeats"] is not None else specs[0].repeats)
    if repeats < 1:
        raise UsageError("repeats must be positive")
    jobs = int(opts["jobs"]) if opts["jobs"] is not None else (os.cpu_count() or 1)
    seed = int(opts["seed"])
    model_name = bench.SUITES[suite]
    if mode == "exploration":
        budget = int(opts["budget"] if opts["budget"] is not None else specs[0].budget)
        if budget < 1:
            raise UsageError("budget must be positive")
        params = explore_params(opts)
        _check_params(params, get_model(model_name))
        result = bench.run_exploration_campaign(algos, model_name, specs, budget, repeats, seed, params, jobs=jobs)
    else:
        budget = int(opts["budget"] if opts["budget"] is not None else 2500)
        if "de" in algos and budget < DE_POP:
            raise UsageError(f"DE needs a budget of at least {DE_POP}")
        if budget < 1:
            raise UsageError("budget must be positive")
        result = bench.run_optimization_campaign(algos, specs, budget, repeats, seed, model=model_name, jobs=jobs)
    out = bench.emit(result, opts["out"] or f"bench-{suite}-{mode}")
    width = max(len(a) for a in algos)
    total = len(specs) * repeats
    for a in algos:
        print(f"{a:<{width}}  {result.success_sum(a)}/{total}")
    print(f"results written to {out}")
    return 0


def cmd_monitor(args) -> int:
    text = args.formula
    try:
        by_id = {b.id: b for b in bench.load_registry()}
        if text in by_id:
            text = by_id[text].formula
    except (OSError, ValueError):
        pass
    f = parse(text)
    y = Signal.from_csv(args.trace, STEP)
    rho = robustness(f, y)
    print(f"{rho:.6f}")
    return 1 if rho < 0 else 0


def cmd_list_specs(args) -> int:
    for b in bench.select(bench.load_registry(), args.suite):
        print(f"{b.id}\t{b.model}\t{b.formula}")
    return 0


def cmd_simulate(opts: dict) -> int:
    model = _open_model(opts)
    try:
        if opts["input"]:
            try:
                u = InputSignal.from_json(json.loads(Path(opts["input"]).read_text()))
            except (OSError, json.JSONDecodeError, KeyError) as exc:
                raise UsageError(f"cannot read input: {exc}") from None
        else:
            b = model.spec.bounds
            rng = np.random.default_rng(int(opts["seed"]))
            u = model.spec.make_input(rng.uniform(b[:, 0], b[:, 1], size=(model.spec.n_segments, model.spec.n_inputs)))
        y = model.simulate(u).output
    finally:
        model.close()
    text = _signal_csv(y)
    if opts["out"]:
        out = Path(opts["out"])
        bench.write_atomic(out.parent if str(out.parent) else ".", {out.name: text})
        print(f"trace written to {out}")
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "monitor":
            return cmd_monitor(args)
        if args.command == "list-specs":
            return cmd_list_specs(args)
        opts = resolve(args)
        if args.command == "falsify":
            return cmd_falsify(opts)
        if args.command == "bench":
            return cmd_bench(opts)
        return cmd_simulate(opts)
    except (UsageError, STLSyntaxError, STLEvalError, SignalError, ModelError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"vf: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
