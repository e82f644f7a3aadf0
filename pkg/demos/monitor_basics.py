"""
Robustness of a trace
=====================

Simulate the integrator, then ask how well the trace meets a few simple
requirements. Positive values mean satisfied, negative values mean
violated, and the magnitude is the margin.
"""

import numpy as np

from voronoi_falsify import get_model, parse, robustness

model = get_model("integrator")
spec = model.spec
print(spec.n_segments, "segments of", spec.segment_duration, "s, horizon", spec.horizon)

# a ramp up for the first half, then hold
u = spec.make_input(np.where(np.arange(spec.n_segments)[:, None] < 15, 1.0, 0.0))
y = model.simulate(u).output
print("final value", y.values[-1, 0])

for text in ("always[0,30] (y < 20)",
             "always[0,30] (y < 10)",
             "eventually[0,30] (abs(y - 15) < 0.5)",
             "always[0,10] (y > 3) => eventually[20,30] (y > 14)"):
    print(f"{robustness(parse(text), y):+9.4f}  {text}")
