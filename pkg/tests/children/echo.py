"""Returns the piecewise-constant input itself, sampled every 0.05."""
import json
import sys

for line in sys.stdin:
    req = json.loads(line)
    h, T, segs = req["h"], req["T"], req["segments"]
    n = int(round(T / 0.05))
    times = [i * 0.05 for i in range(n + 1)]
    values = [segs[min(int(t / h + 1e-9), len(segs) - 1)] for t in times]
    print(json.dumps({"times": times, "values": values}), flush=True)
