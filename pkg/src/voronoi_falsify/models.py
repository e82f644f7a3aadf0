"""Black-box models mapping piecewise-constant inputs to sampled outputs.

Built-in models:

``integrator``
    ``y' = u``, ``y(0) = 0``, ``u`` in ``[-1, 1]``, ``T = 30``; integrated in
    closed form.
``at``
    Surrogate automatic transmission (speed, RPM, gear) driven by throttle
    and brake. A documented stand-in for the proprietary benchmark model.
``cc``
    Five chasing cars; the lead car follows throttle/brake, the others a
    linear gap/velocity feedback law. Output ``y5`` is the lead car.

Anything else can be attached through :class:`ExternalModel`, which talks
newline-delimited JSON to a child process.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .signal import STEP, TIME_TOL, InputSignal, Signal, grid_times, n_segments, resample


class ModelError(RuntimeError):
    pass


class ProtocolError(ModelError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_dims: tuple[tuple[str, float, float], ...]
    output_dims: tuple[str, ...]
    horizon: float
    segment_duration: float

    def __post_init__(self):
        for name, lo, hi in self.input_dims:
            if not lo < hi:
                raise ValueError(f"input {name}: min must be below max")
        if n_segments(self.horizon, self.segment_duration) < 1:
            raise ValueError("horizon must hold at least one segment")

    @property
    def bounds(self) -> np.ndarray:
        return np.array([[lo, hi] for _, lo, hi in self.input_dims], dtype=float)

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(n for n, _, _ in self.input_dims)

    @property
    def n_segments(self) -> int:
        return n_segments(self.horizon, self.segment_duration)

    @property
    def n_inputs(self) -> int:
        return len(self.input_dims)

    @property
    def n_outputs(self) -> int:
        return len(self.output_dims)

    @property
    def n_times(self) -> int:
        return len(grid_times(self.horizon))

    def make_input(self, segments, h: float | None = None) -> InputSignal:
        return InputSignal(
            np.asarray(segments, dtype=float).reshape(-1, self.n_inputs),
            self.segment_duration if h is None else h,
            self.horizon,
            self.bounds,
        )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "input_dims": [list(d) for d in self.input_dims],
            "output_dims": list(self.output_dims),
            "T": self.horizon,
            "h": self.segment_duration,
        }


@dataclass(frozen=True)
class SimResult:
    output: Signal
    cost: float = 1.0


class Model:
    """Base class: subclasses implement :meth:`output_array`."""

    spec: ModelSpec

    def output_array(self, u: InputSignal) -> np.ndarray:
        """Outputs on the 0.1 grid over ``[0, u.horizon]``, shape ``(time, dim)``."""
        raise NotImplementedError

    def simulate(self, u: InputSignal) -> SimResult:
        values = self.output_array(u)
        return SimResult(
            Signal(STEP, values, self.spec.output_dims),
            cost=u.horizon / self.spec.horizon,
        )

    def close(self):
        pass


# ---------------------------------------------------------------- integrator

INTEGRATOR_SPEC = ModelSpec(
    name="integrator",
    input_dims=(("u", -1.0, 1.0),),
    output_dims=("y",),
    horizon=30.0,
    segment_duration=1.0,
)


class Integrator(Model):
    def __init__(self, spec: ModelSpec = INTEGRATOR_SPEC):
        self.spec = spec

    def output_array(self, u: InputSignal) -> np.ndarray:
        t = grid_times(u.horizon)
        h = u.segment_duration
        seg = u.segment_values[:, 0]
        knots = np.concatenate([[0.0], np.cumsum(seg * h)])
        j = u.segment_index(t)
        y = knots[j] + seg[j] * (t - j * h)
        return y[:, None]


def simulate_integrator(u: InputSignal) -> SimResult:
    return Integrator().simulate(u)


# ---------------------------------------------------------------- automatic transmission

AT_SPEC = ModelSpec(
    name="at",
    input_dims=(("throttle", 0.0, 100.0), ("brake", 0.0, 325.0)),
    output_dims=("speed", "RPM", "gear"),
    horizon=30.0,
    segment_duration=5.0,
)

AT_DT = 0.01
AT_GEAR_RATIO = np.array([2.2, 1.5, 1.1, 0.9])
AT_RPM_PER_SPEED = np.array([90.0, 55.0, 38.0, 28.0])
AT_UPSHIFT_RPM = 3500.0
AT_DOWNSHIFT_RPM = 1200.0
AT_SHIFT_DWELL = 0.1
AT_SHIFT_LOCKOUT = 0.5


@numba.njit(cache=True)
def _at_accel(speed, throttle, brake, ratio):
    return 0.04 * throttle * ratio - 0.012 * brake - 0.02 * speed


@numba.njit(cache=True)
def _at_run(segments, h, n_steps, dt, ratios, rpm_per_speed, up_rpm, down_rpm,
            dwell_steps, lockout_steps):
    out = np.empty((n_steps + 1, 3))
    n_seg = segments.shape[0]
    speed = 0.0
    gear = 1
    up = 0
    down = 0
    lockout = 0
    for k in range(n_steps + 1):
        j = int(np.floor(k * dt / h + 1e-9))
        if j > n_seg - 1:
            j = n_seg - 1
        thr = segments[j, 0]
        brk = segments[j, 1]
        rpm = 600.0 + speed * rpm_per_speed[gear - 1] + 8.0 * thr
        out[k, 0] = speed
        out[k, 1] = rpm
        out[k, 2] = gear
        if k == n_steps:
            break
        r = ratios[gear - 1]
        k1 = _at_accel(speed, thr, brk, r)
        k2 = _at_accel(speed + 0.5 * dt * k1, thr, brk, r)
        k3 = _at_accel(speed + 0.5 * dt * k2, thr, brk, r)
        k4 = _at_accel(speed + dt * k3, thr, brk, r)
        speed += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if speed < 0.0:
            speed = 0.0
        rpm = 600.0 + speed * rpm_per_speed[gear - 1] + 8.0 * thr
        if lockout > 0:
            lockout -= 1
            up = 0
            down = 0
            continue
        up = up + 1 if (rpm > up_rpm and gear < 4) else 0
        down = down + 1 if (rpm < down_rpm and gear > 1) else 0
        if up >= dwell_steps:
            gear += 1
            up = down = 0
            lockout = lockout_steps
        elif down >= dwell_steps:
            gear -= 1
            up = down = 0
            lockout = lockout_steps
    return out


class ATSurrogate(Model):
    """Surrogate automatic transmission with dwell-time gear shifting.

    ``speed' = 0.04*throttle*ratio(gear) - 0.012*brake - 0.02*speed`` (speed
    clamped at 0), ``RPM = 600 + speed*rpm_per_speed(gear) + 8*throttle``.
    Shifts up after RPM > 3500 for 0.1 time units, down after RPM < 1200 for
    0.1 time units, then locks shifting for 0.5 time units.
    """

    def __init__(self, spec: ModelSpec = AT_SPEC):
        self.spec = spec

    def output_array(self, u: InputSignal) -> np.ndarray:
        n_steps = int(round(u.horizon / AT_DT))
        raw = _at_run(
            np.ascontiguousarray(u.segment_values), u.segment_duration, n_steps, AT_DT,
            AT_GEAR_RATIO, AT_RPM_PER_SPEED, AT_UPSHIFT_RPM, AT_DOWNSHIFT_RPM,
            int(round(AT_SHIFT_DWELL / AT_DT)), int(round(AT_SHIFT_LOCKOUT / AT_DT)),
        )
        return _subsample(raw, AT_DT, u.horizon)


def simulate_at_surrogate(u: InputSignal) -> SimResult:
    return ATSurrogate().simulate(u)


# ---------------------------------------------------------------- chasing cars

CC_SPEC = ModelSpec(
    name="cc",
    input_dims=(("throttle", 0.0, 1.0), ("brake", 0.0, 1.0)),
    output_dims=("y1", "y2", "y3", "y4", "y5"),
    horizon=100.0,
    segment_duration=20.0,
)

CC_DT = 0.05
CC_GAP_GAIN = 1.0
CC_VEL_GAIN = 1.5
CC_REF_GAP = 10.0
CC_VMAX = 40.0
CC_INIT_POS = np.array([40.0, 30.0, 20.0, 10.0, 0.0])


@numba.njit(cache=True)
def _cc_deriv(x, v, thr, brk, kp, kd, d_ref, vmax, dx, dv):
    # velocity limits act inside the RK4 stages too, so positions never run backwards
    a = 4.0 * thr - 5.0 * brk - 0.1 * v[0]
    if v[0] <= 0.0 and a < 0.0:
        a = 0.0
    dv[0] = a
    dx[0] = max(v[0], 0.0)
    for i in range(1, x.shape[0]):
        dx[i] = min(max(v[i], 0.0), vmax)
        a = kp * ((x[i - 1] - x[i]) - d_ref) + kd * (v[i - 1] - v[i])
        if (v[i] <= 0.0 and a < 0.0) or (v[i] >= vmax and a > 0.0):
            a = 0.0
        dv[i] = a


@numba.njit(cache=True)
def _cc_run(segments, h, n_steps, dt, x0, kp, kd, d_ref, vmax):
    n = x0.shape[0]
    out = np.empty((n_steps + 1, n))
    x = x0.copy()
    v = np.zeros(n)
    xs = np.empty(n)
    vs = np.empty(n)
    kx = np.empty((4, n))
    kv = np.empty((4, n))
    n_seg = segments.shape[0]
    for k in range(n_steps + 1):
        for i in range(n):
            out[k, i] = x[n - 1 - i]
        if k == n_steps:
            break
        j = int(np.floor(k * dt / h + 1e-9))
        if j > n_seg - 1:
            j = n_seg - 1
        thr = segments[j, 0]
        brk = segments[j, 1]
        _cc_deriv(x, v, thr, brk, kp, kd, d_ref, vmax, kx[0], kv[0])
        for stage in range(1, 4):
            c = dt if stage == 3 else 0.5 * dt
            for i in range(n):
                xs[i] = x[i] + c * kx[stage - 1, i]
                vs[i] = v[i] + c * kv[stage - 1, i]
            _cc_deriv(xs, vs, thr, brk, kp, kd, d_ref, vmax, kx[stage], kv[stage])
        for i in range(n):
            x[i] += dt / 6.0 * (kx[0, i] + 2.0 * kx[1, i] + 2.0 * kx[2, i] + kx[3, i])
            v[i] += dt / 6.0 * (kv[0, i] + 2.0 * kv[1, i] + 2.0 * kv[2, i] + kv[3, i])
        if v[0] < 0.0:
            v[0] = 0.0
        for i in range(1, n):
            if v[i] < 0.0:
                v[i] = 0.0
            elif v[i] > vmax:
                v[i] = vmax
    return out


class ChasingCars(Model):
    """Lead car ``v' = 4*throttle - 5*brake - 0.1*v``; followers
    ``v_i' = (gap_i - 10) + 1.5*(v_{i-1} - v_i)`` with ``v_i`` in ``[0, 40]``.

    Velocities are held at their limits during integration (acceleration
    pushing past a limit is dropped) and also clamped after every step.
    """

    def __init__(self, spec: ModelSpec = CC_SPEC):
        self.spec = spec

    def output_array(self, u: InputSignal) -> np.ndarray:
        n_steps = int(round(u.horizon / CC_DT))
        raw = _cc_run(
            np.ascontiguousarray(u.segment_values), u.segment_duration, n_steps, CC_DT,
            CC_INIT_POS, CC_GAP_GAIN, CC_VEL_GAIN, CC_REF_GAP, CC_VMAX,
        )
        return _subsample(raw, CC_DT, u.horizon)


def simulate_chasing_cars(u: InputSignal) -> SimResult:
    return ChasingCars().simulate(u)


def _subsample(raw: np.ndarray, dt: float, horizon: float) -> np.ndarray:
    ratio = STEP / dt
    k = int(round(ratio))
    if abs(ratio - k) < TIME_TOL:
        return raw[::k][: len(grid_times(horizon))].copy()
    times = np.arange(len(raw)) * dt
    return resample(times, raw, STEP, horizon).values.copy()


# ---------------------------------------------------------------- external process

class ExternalModel(Model):
    """Adapter for a child process speaking newline-delimited JSON.

    Each simulation writes ``{"h": .., "T": .., "segments": [[..], ..]}`` and
    reads back ``{"times": [..], "values": [[..], ..]}``. The child is started
    lazily and closed by :meth:`close` (closing its standard input).
    """

    def __init__(self, command: Sequence[str], spec: ModelSpec, timeout: float = 60.0):
        self.command = list(command)
        self.spec = spec
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._line_no = 0

    def _start(self):
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1,
            )
        except OSError as exc:
            raise ModelError(f"cannot start external model {self.command}: {exc}") from exc

        def pump(stream, sink):
            for line in stream:
                sink.put(line)
            sink.put(None)

        threading.Thread(target=pump, args=(self._proc.stdout, self._lines), daemon=True).start()

    def _request(self, u: InputSignal) -> dict:
        if self._proc is None:
            self._start()
        msg = {"h": u.segment_duration, "T": u.horizon, "segments": u.segment_values.tolist()}
        try:
            self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ModelError(f"external model stopped accepting input: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self._kill()
            raise ModelError(f"external model timed out after {self.timeout} s") from None
        if line is None:
            raise ProtocolError(f"external model closed its output after line {self._line_no}")
        self._line_no += 1
        try:
            reply = json.loads(line)
            times = np.asarray(reply["times"], dtype=float)
            values = np.asarray(reply["values"], dtype=float)
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed response on line {self._line_no}: {exc}") from exc
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] != self.spec.n_outputs:
            raise ProtocolError(
                f"line {self._line_no}: expected {self.spec.n_outputs} output columns"
            )
        return {"times": times, "values": values}

    def output_array(self, u: InputSignal) -> np.ndarray:
        reply = self._request(u)
        return resample(reply["times"], reply["values"], STEP, u.horizon).values.copy()

    def _kill(self):
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None
        # the old reader thread may still push into the previous queue
        self._lines = queue.Queue()
        self._line_no = 0

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def simulate_external(u: InputSignal, command: Sequence[str], spec: ModelSpec,
                      timeout: float = 60.0) -> SimResult:
    with ExternalModel(command, spec, timeout) as model:
        return model.simulate(u)


BUILTIN_MODELS = {"integrator": Integrator, "at": ATSurrogate, "cc": ChasingCars}


def get_model(name: str) -> Model:
    try:
        return BUILTIN_MODELS[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None
