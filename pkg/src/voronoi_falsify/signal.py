"""Uniformly sampled signals and piecewise-constant input parameterizations."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

STEP = 0.1
TIME_TOL = 1e-9


def grid_size(horizon: float, step: float = STEP) -> int:
    """Number of samples on the closed grid ``0, step, ..., horizon``."""
    return int(math.floor(horizon / step + TIME_TOL)) + 1


def grid_times(horizon: float, step: float = STEP) -> np.ndarray:
    return np.arange(grid_size(horizon, step)) * step


class SignalError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Signal:
    """A multi-dimensional time series sampled at ``i * step``.

    ``values`` has shape ``(n_times, n_dims)``; row ``i`` is the sample at
    time ``i * step``.
    """

    step: float
    values: np.ndarray
    dim_names: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise SignalError("values must be a (time, dim) matrix")
        if values.shape[1] != len(self.dim_names):
            raise SignalError(
                f"{values.shape[1]} columns but {len(self.dim_names)} dim names"
            )
        if not np.all(np.isfinite(values)):
            raise SignalError("signal values must be finite")
        if self.step <= 0:
            raise SignalError("step must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dim_names", tuple(self.dim_names))

    @property
    def horizon(self) -> float:
        return (len(self.values) - 1) * self.step

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.step

    def __len__(self):
        return len(self.values)

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises for off-grid or out-of-range times."""
        pos = t / self.step
        i = int(round(pos))
        if abs(i * self.step - t) > TIME_TOL or not 0 <= i < len(self.values):
            raise SignalError(f"time {t} is not a grid point of this signal")
        return i

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.dim_names.index(name)]
        except ValueError:
            raise SignalError(f"unknown dimension {name!r}") from None

    def __eq__(self, other):
        if not isinstance(other, Signal):
            return NotImplemented
        return (
            self.step == other.step
            and self.dim_names == other.dim_names
            and np.array_equal(self.values, other.values)
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", *self.dim_names])
            for t, row in zip(self.times, self.values):
                writer.writerow([f"{t:.10g}", *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path, step: float = STEP) -> "Signal":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0].strip() != "t":
            raise SignalError(f"{path}: header must start with 't'")
        names = [c.strip() for c in rows[0][1:]]
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
        if data.size == 0:
            raise SignalError(f"{path}: no samples")
        times, values = data[:, 0], data[:, 1:]
        return resample(times, values, step, times[-1], names)


def value_at(signal: Signal, t: float) -> np.ndarray:
    return signal.values[signal.index_of(t)]


@dataclass(frozen=True, eq=False)
class InputSignal:
    """Piecewise-constant input: ``segment_values[j]`` holds on ``[j*h, (j+1)*h)``.

    The last segment also covers ``t = horizon``.
    """

    segment_values: np.ndarray
    segment_duration: float
    horizon: float
    bounds: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.segment_values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        bounds = np.array(self.bounds, dtype=float).reshape(-1, 2)
        h, T = float(self.segment_duration), float(self.horizon)
        if h <= 0 or T <= 0:
            raise SignalError("segment duration and horizon must be positive")
        n_seg = n_segments(T, h)
        if vals.shape != (n_seg, len(bounds)):
            raise SignalError(
                f"expected {n_seg} segments x {len(bounds)} dims, got {vals.shape}"
            )
        if np.any(vals < bounds[:, 0] - 1e-12) or np.any(vals > bounds[:, 1] + 1e-12):
            raise SignalError("segment value outside input bounds")
        vals.setflags(write=False)
        bounds.setflags(write=False)
        object.__setattr__(self, "segment_values", vals)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "segment_duration", h)
        object.__setattr__(self, "horizon", T)

    @property
    def n_segments(self) -> int:
        return len(self.segment_values)

    @property
    def n_dims(self) -> int:
        return self.segment_values.shape[1]

    def segment_index(self, t) -> np.ndarray:
        idx = np.floor(np.asarray(t) / self.segment_duration + TIME_TOL).astype(int)
        return np.clip(idx, 0, self.n_segments - 1)

    def prefix(self, n: int) -> "InputSignal":
        """The first ``n`` segments as an input over ``[0, n*h]``."""
        return InputSignal(
            self.segment_values[:n], self.segment_duration,
            n * self.segment_duration, self.bounds,
        )

    def __eq__(self, other):
        if not isinstance(other, InputSignal):
            return NotImplemented
        return (
            self.segment_duration == other.segment_duration
            and self.horizon == other.horizon
            and np.array_equal(self.segment_values, other.segment_values)
            and np.array_equal(self.bounds, other.bounds)
        )

    def __hash__(self):
        return hash((self.segment_duration, self.horizon, self.segment_values.tobytes()))

    def to_json(self) -> dict:
        return {
            "h": self.segment_duration,
            "T": self.horizon,
            "segments": self.segment_values.tolist(),
            "bounds": self.bounds.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "InputSignal":
        return cls(np.array(d["segments"]), d["h"], d["T"], np.array(d["bounds"]))


def n_segments(horizon: float, h: float) -> int:
    return max(1, int(math.ceil(horizon / h - TIME_TOL)))


def to_signal(u: InputSignal, step: float = STEP, dim_names: Sequence[str] | None = None) -> Signal:
    """Materialize ``u`` on the closed evaluation grid."""
    h = u.segment_duration
    ratio = h / step
    if not (step < h or abs(ratio - round(ratio)) < TIME_TOL):
        raise SignalError(f"step {step} incompatible with segment duration {h}")
    t = grid_times(u.horizon, step)
    names = dim_names or tuple(f"u{i + 1}" for i in range(u.n_dims))
    return Signal(step, u.segment_values[u.segment_index(t)], tuple(names))


def resample(
    raw_times,
    raw_values,
    step: float,
    horizon: float,
    dim_names: Sequence[str] | None = None,
) -> Signal:
    """Linearly interpolate a raw trace onto the grid over ``[0, horizon]``.

    Samples past ``horizon`` are ignored. Grid points within ``TIME_TOL`` of a
    raw sample take that sample verbatim.
    """
    times = np.asarray(raw_times, dtype=float)
    values = np.asarray(raw_values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if len(times) != len(values) or len(times) == 0:
        raise SignalError("raw times and values have different lengths")
    if np.any(np.diff(times) <= 0):
        raise SignalError("raw times must be strictly increasing")
    if times[0] > TIME_TOL or times[-1] < horizon - TIME_TOL:
        raise SignalError(
            f"trace covers [{times[0]}, {times[-1]}] which does not cover horizon [0, {horizon}]"
        )
    grid = grid_times(horizon, step)
    out = np.empty((len(grid), values.shape[1]))
    for d in range(values.shape[1]):
        out[:, d] = np.interp(grid, times, values[:, d])
    pos = np.clip(np.searchsorted(times, grid), 0, len(times) - 1)
    for cand in (pos, np.maximum(pos - 1, 0)):
        hit = np.abs(times[cand] - grid) <= TIME_TOL
        out[hit] = values[cand[hit]]
    names = dim_names or tuple(f"y{i + 1}" for i in range(values.shape[1]))
    return Signal(step, out, tuple(names))
