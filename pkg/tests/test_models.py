import sys
import threading
from pathlib import Path

import numpy as np
import pytest

from voronoi_falsify.models import (
    AT_SPEC, CC_SPEC, INTEGRATOR_SPEC, ATSurrogate, ChasingCars, ExternalModel, Integrator,
    ModelError, ModelSpec, ProtocolError, get_model, simulate_at_surrogate,
    simulate_chasing_cars, simulate_external, simulate_integrator,
)
from voronoi_falsify.signal import SignalError, to_signal

CHILDREN = Path(__file__).parent / "children"


def child(name):
    return [sys.executable, str(CHILDREN / name)]


def const_input(spec, values, h=None):
    n = spec.n_segments if h is None else int(round(spec.horizon / h))
    return spec.make_input(np.tile(np.asarray(values, dtype=float), (n, 1)), h)


def analytic_integrator(seg, h, t):
    """y(t) by summing whole segments then the partial one."""
    out = np.empty(len(t))
    for i, ti in enumerate(t):
        j = min(int(np.floor(ti / h + 1e-9)), len(seg) - 1)
        out[i] = sum(seg[:j]) * h + seg[j] * (ti - j * h)
    return out


# ---------------------------------------------------------------- integrator


def test_integrator_unit_input():
    y = simulate_integrator(const_input(INTEGRATOR_SPEC, [1.0])).output
    assert y.values[-1, 0] == pytest.approx(30.0, abs=1e-12)


def test_integrator_zero_input():
    y = simulate_integrator(const_input(INTEGRATOR_SPEC, [0.0])).output
    assert np.all(y.values == 0)


def test_integrator_two_segments():
    u = INTEGRATOR_SPEC.make_input([[1.0], [-1.0]], h=15)
    y = simulate_integrator(u).output
    assert y.values[150, 0] == pytest.approx(15, abs=1e-12)
    assert y.values[300, 0] == pytest.approx(0, abs=1e-12)


def test_integrator_exact_random_inputs():
    rng = np.random.default_rng(5)
    m = Integrator()
    for _ in range(100):
        u = m.spec.make_input(rng.uniform(-1, 1, size=(m.spec.n_segments, 1)))
        y = m.output_array(u)[:, 0]
        t = np.arange(301) * 0.1
        ref = analytic_integrator(u.segment_values[:, 0], u.segment_duration, t)
        assert np.max(np.abs(y - ref)) <= 1e-12


def test_sim_cost_is_one_for_full_horizon():
    assert simulate_integrator(const_input(INTEGRATOR_SPEC, [0.5])).cost == 1.0


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("bad", (("u", 1.0, 1.0),), ("y",), 10.0, 1.0)


def test_get_model_unknown():
    with pytest.raises(KeyError):
        get_model("nope")


# ------------------------------------------------------------ chasing cars


def _gaps(y):
    # columns y1..y5 with y5 the lead car
    return np.diff(y, axis=1)


def test_cc_full_brake_stays_put():
    out = ChasingCars().output_array(const_input(CC_SPEC, [0.0, 1.0]))
    lead = out[:, 4]
    assert np.all(lead == 40.0)
    assert np.allclose(_gaps(out)[-1], 10.0, atol=0.5)


def test_cc_idle_gaps_converge():
    out = ChasingCars().output_array(const_input(CC_SPEC, [0.0, 0.0]))
    assert np.all(np.abs(_gaps(out)[-1] - 10.0) <= 0.5)


def test_cc_full_throttle_gaps_positive():
    out = simulate_chasing_cars(const_input(CC_SPEC, [1.0, 0.0])).output.values
    assert np.all(_gaps(out) > 0)


def test_cc_output_shape_and_finite():
    rng = np.random.default_rng(2)
    u = CC_SPEC.make_input(rng.random((CC_SPEC.n_segments, 2)))
    out = ChasingCars().output_array(u)
    assert out.shape == (1001, 5)
    assert np.all(np.isfinite(out))


# ------------------------------------------------------------------- AT


def test_at_full_brake_idle():
    out = ATSurrogate().output_array(const_input(AT_SPEC, [0.0, 325.0]))
    assert np.all(out[:, 0] == 0)
    assert np.all(out[:, 2] == 1)
    assert np.all(out[:, 1] == 600)


def test_at_full_throttle():
    y = simulate_at_surrogate(const_input(AT_SPEC, [100.0, 0.0])).output
    speed, gear = y.column("speed"), y.column("gear")
    assert gear.max() == 4
    assert np.all(np.diff(speed) >= 0)


def test_at_gear_values_and_lockout():
    rng = np.random.default_rng(11)
    m = ATSurrogate()
    for _ in range(200):
        u = AT_SPEC.make_input(rng.uniform(AT_SPEC.bounds[:, 0], AT_SPEC.bounds[:, 1], size=(6, 2)))
        gear = m.output_array(u)[:, 2]
        assert set(np.unique(gear)) <= {1.0, 2.0, 3.0, 4.0}
        change = np.flatnonzero(np.diff(gear) != 0)
        if len(change) > 1:
            # sample spacing 0.1, lockout 0.5
            assert np.min(np.diff(change)) >= 5


def test_at_outputs_clamped():
    rng = np.random.default_rng(12)
    m = ATSurrogate()
    u = AT_SPEC.make_input(rng.uniform(AT_SPEC.bounds[:, 0], AT_SPEC.bounds[:, 1], size=(6, 2)))
    out = m.output_array(u)
    assert np.all(out[:, 0] >= 0) and np.all(out[:, 1] >= 600)


# ---------------------------------------------------- determinism, purity


@pytest.mark.parametrize("spec,cls", [(INTEGRATOR_SPEC, Integrator), (AT_SPEC, ATSurrogate), (CC_SPEC, ChasingCars)])
def test_deterministic_and_pure(spec, cls):
    rng = np.random.default_rng(0)
    b = spec.bounds
    inputs = [spec.make_input(rng.uniform(b[:, 0], b[:, 1], size=(spec.n_segments, spec.n_inputs)))
              for _ in range(8)]
    m = cls()
    seq = [m.output_array(u) for u in inputs]
    again = [cls().output_array(u) for u in inputs]
    results = [None] * len(inputs)

    def work(i):
        results[i] = m.output_array(inputs[i])

    threads = [threading.Thread(target=work, args=(i,)) for i in range(len(inputs))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for a, b_, c in zip(seq, again, results):
        assert np.array_equal(a, b_) and np.array_equal(a, c)


# -------------------------------------------------------------- external

ECHO_SPEC = ModelSpec("echo", (("u", -1.0, 1.0),), ("y",), 3.0, 1.0)


def test_external_echo_matches_input():
    u = ECHO_SPEC.make_input([[0.5], [-0.25], [1.0]])
    with ExternalModel(child("echo.py"), ECHO_SPEC) as m:
        for _ in range(3):
            y = m.simulate(u).output
            assert np.array_equal(y.values, to_signal(u).values)


def test_simulate_external_helper():
    u = ECHO_SPEC.make_input([[0.1], [0.2], [0.3]])
    res = simulate_external(u, child("echo.py"), ECHO_SPEC)
    assert res.output.values[-1, 0] == 0.3


def test_external_malformed_line():
    u = ECHO_SPEC.make_input([[0.0], [0.0], [0.0]])
    with ExternalModel(child("malformed.py"), ECHO_SPEC) as m:
        m.simulate(u)
        with pytest.raises(ProtocolError, match="line 2"):
            m.simulate(u)


def test_external_half_horizon():
    u = ECHO_SPEC.make_input([[0.0], [0.0], [0.0]])
    with ExternalModel(child("half.py"), ECHO_SPEC) as m:
        with pytest.raises(SignalError, match="does not cover horizon"):
            m.simulate(u)


def test_external_timeout():
    u = ECHO_SPEC.make_input([[0.0], [0.0], [0.0]])
    with ExternalModel(child("sleeper.py"), ECHO_SPEC, timeout=0.5) as m:
        with pytest.raises(ModelError, match="timed out"):
            m.simulate(u)


def test_external_spawn_failure():
    u = ECHO_SPEC.make_input([[0.0], [0.0], [0.0]])
    with pytest.raises(ModelError, match="cannot start"):
        ExternalModel(["/nonexistent/simulator"], ECHO_SPEC).simulate(u)
