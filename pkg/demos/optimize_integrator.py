"""
Robustness-guided search
========================

The optimizers treat robustness as a cost and stop on the first negative
value. Here all three attack one requirement on the integrator.
"""

from voronoi_falsify import Objective, get_model, run_optimizer

model = get_model("integrator")
formula = "(always[10,20] (y > 6) and always[10,20] (y < 9)) => always[20,30] (y < 14)"

for name in ("shc", "de", "cmaes"):
    res = run_optimizer(name, Objective(model, formula), budget=2500, seed=3)
    print(f"{name:6s} falsified={res.falsified} robustness={res.best_robustness:+.4f} "
          f"evaluations={res.evaluations}")

###############################################################################
# The history holds the running best value after each evaluation.

res = run_optimizer("cmaes", Objective(model, formula), budget=2500, seed=3)
for n, best in res.history[:: max(1, len(res.history) // 8)]:
    print(f"{int(n):5d}  {best:+.4f}")
