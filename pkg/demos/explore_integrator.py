"""
Exploring output space
======================

Grow a library of traces with uniform random sampling and with output
space exploration, then check which requirements each library already
breaks. Nothing is optimized against the formulas; they are only checked
afterwards.
"""

import numpy as np

from voronoi_falsify import ExploreParams, get_model, run_explorer
from voronoi_falsify.bench import check_library, load_registry, select

model = get_model("integrator")
specs = select(load_registry(), "si")
formulas = [b.ast for b in specs]

libs = {}
for algo in ("ur", "ose"):
    libs[algo], _ = run_explorer(algo, model, ExploreParams(seed=1, budget=3000))

###############################################################################
# The output envelope: OSE pushes the running max/min further out.

for algo, lib in libs.items():
    print(f"{algo}: final value spans [{lib.lb[-1, 0]:.2f}, {lib.ub[-1, 0]:.2f}]")

###############################################################################
# Which specs does each library falsify, and after how many simulations?

for algo, lib in libs.items():
    mins, first = check_library(lib, formulas)
    hits = [f"{b.id}@{lib.costs[j]:.0f}" for b, j in zip(specs, first) if j >= 0]
    print(f"{algo}: {len(hits)}/{len(specs)}  {' '.join(hits)}")
