import csv

import numpy as np
import pytest

from ergodens.barrier import make_power_exp_barrier
from ergodens.errors import NumericalBlowupError, ParameterError
from ergodens.model import build_explicit
from ergodens.sde import (FLOOR_EPS, LOGNORMAL, SimConfig, assumption3_functional,
                          assumption3_integrand, check_gronwall_envelope, default_sample_times,
                          plateau_check, reciprocal_barrier, simulate_functional, simulate_paths,
                          step, write_trace_csv)


def test_step_zero_drift_and_noise_is_identity():
    m = build_explicit(["0"], [["(pow (var 1) 0.5)"]])
    x = np.array([[0.3, 1.0, 7.5]])
    assert np.array_equal(step(m, x, 0.1, np.zeros_like(x)), x)


def test_step_at_drift_equilibrium(cir211):
    assert step(cir211, np.array([2.0]), 0.1, np.zeros(1))[0] == 2.0


def test_step_clips_to_floor():
    m = build_explicit(["-0.11"], [["0"]])
    out = step(m, np.array([0.001]), 0.1, np.zeros(1))
    assert out[0] == FLOOR_EPS


def test_step_full_truncation_uses_positive_part(cir211):
    # a negative candidate from a large shock is floored, never NaN
    out = step(cir211, np.array([[0.01]]), 0.5, np.array([[-30.0]]))
    assert out[0, 0] == FLOOR_EPS


def test_step_blowup_reports_path():
    m = build_explicit(["(pow (var 1) 400)"], [["0"]])
    x = np.array([[1.0, 10.0]])
    with pytest.raises(NumericalBlowupError) as info:
        step(m, x, 1.0, np.zeros_like(x))
    assert info.value.path_index == 1


def test_step_shape_mismatch(cir211):
    with pytest.raises(ParameterError):
        step(cir211, np.ones((1, 3)), 0.1, np.zeros((1, 2)))


def test_config_validation():
    with pytest.raises(ParameterError):
        SimConfig((0.0,), 0.01, 1.0, 10)
    with pytest.raises(ParameterError):
        SimConfig((1.0,), 0.01, 1.0, 11, antithetic=True)
    with pytest.raises(ParameterError):
        SimConfig((1.0,), 2.0, 1.0, 10)
    with pytest.raises(ParameterError):
        SimConfig((1.0,), 0.1, 1.0, 10, scheme="milstein")


def test_default_sample_times():
    t = default_sample_times(5.0, 1e-3)
    assert t[0] == 0 and t[-1] == 5 and 0.5 in t and 3.0 in t and len(t) == 15


def test_constant_functional(cir211):
    tr = simulate_functional(cir211, SimConfig((1.0,), 0.01, 2.0, 50), "1")
    assert np.all(tr.mean == 1) and np.all(tr.se == 0)


def test_reciprocal_barrier_exact_at_start(cir211, flagship_barrier):
    tr = simulate_functional(cir211, SimConfig((1.0,), 0.01, 1.0, 200), reciprocal_barrier(flagship_barrier))
    assert tr.times[0] == 0 and tr.se[0] == 0
    assert tr.mean[0] == np.exp(-flagship_barrier.log_psi(np.array([[1.0]])))[0]


def test_stationary_mean(cir211):
    cfg = SimConfig((0.5,), 0.01, 20.0, 4000, seed=7)
    tr = simulate_functional(cir211, cfg, "(var 1)", sample_times=[0.0, 20.0])
    assert abs(tr.mean[-1] - 2.0) < 3 * tr.se[-1]


def test_positivity(cir111):
    cfg = SimConfig((0.05,), 0.05, 2.0, 500, seed=3)
    _, v = simulate_paths(cir111, cfg, lambda x: x[0], sample_times=np.arange(0, 2.01, 0.05))
    assert v.min() >= FLOOR_EPS


def test_deterministic_across_blocks_and_threads(cir211, flagship_barrier):
    f = reciprocal_barrier(flagship_barrier)
    base = SimConfig((1.0,), 0.01, 2.0, 300, seed=11)
    ref = simulate_paths(cir211, base, f)[1]
    for kw in ({"block": 64}, {"block": 7, "threads": 3}, {"chunk": 13}):
        cfg = SimConfig((1.0,), 0.01, 2.0, 300, seed=11, **kw)
        assert np.array_equal(simulate_paths(cir211, cfg, f)[1], ref)
    other = SimConfig((1.0,), 0.01, 2.0, 300, seed=12)
    assert not np.array_equal(simulate_paths(cir211, other, f)[1], ref)


def test_antithetic_pairs_mirror_noise():
    m = build_explicit(["0"], [["1"]])
    cfg = SimConfig((5.0,), 0.1, 1.0, 6, antithetic=True, block=4)
    _, v = simulate_paths(m, cfg, lambda x: x[0] - 5.0, sample_times=[1.0])
    assert np.allclose(v[0, 0::2], -v[0, 1::2])
    tr = simulate_functional(m, cfg, lambda x: x[0] - 5.0, sample_times=[1.0])
    assert abs(tr.mean[0]) < 1e-12


def test_lognormal_scheme_stationary_mean(cir211):
    cfg = SimConfig((1.0,), 0.05, 10.0, 2000, scheme=LOGNORMAL, seed=5)
    tr = simulate_functional(cir211, cfg, "(var 1)", sample_times=[0.0, 10.0])
    assert abs(tr.mean[-1] - 2.0) < 3 * tr.se[-1] + 1e-3


def test_lognormal_requires_cir(cascade):
    cfg = SimConfig((1.0, 1.0), 0.05, 1.0, 10, scheme=LOGNORMAL)
    with pytest.raises(ParameterError):
        simulate_paths(cascade, cfg, "1")


def test_envelope_at_time_zero(cir211, flagship_barrier):
    tr = simulate_functional(cir211, SimConfig((1.0,), 0.01, 1.0, 100), reciprocal_barrier(flagship_barrier))
    rep = check_gronwall_envelope(tr, (1.0,), 0.0, flagship_barrier)
    assert rep.slack[0] == 0.0


def test_envelope_falsified_without_constant(cir211, flagship_barrier):
    cfg = SimConfig((1.0,), 0.01, 5.0, 1000, seed=2)
    tr = simulate_functional(cir211, cfg, reciprocal_barrier(flagship_barrier))
    assert check_gronwall_envelope(tr, (1.0,), 2.608, flagship_barrier).passed
    rep = check_gronwall_envelope(tr, (1.0,), 0.0, flagship_barrier)
    assert not rep.passed and rep.worst_time > 0 and rep.worst_slack < 0


def test_weak_convergence_in_dt(cir211, flagship_barrier):
    f = reciprocal_barrier(flagship_barrier)
    a = simulate_functional(cir211, SimConfig((1.0,), 0.02, 1.0, 4000, seed=1), f, [0.0, 1.0])
    b = simulate_functional(cir211, SimConfig((1.0,), 0.01, 1.0, 4000, seed=2), f, [0.0, 1.0])
    assert abs(a.mean[1] - b.mean[1]) < 3 * np.hypot(a.se[1], b.se[1])


def test_assumption3_reduces_to_reciprocal_without_diffusion(flagship_barrier):
    m = build_explicit(["(add 2 (mul -1 (var 1)))"], [["0"]])
    x = np.array([[0.3, 1.0, 4.0]])
    assert np.allclose(assumption3_integrand(m, flagship_barrier)(x), reciprocal_barrier(flagship_barrier)(x))


def test_assumption3_bounded_away_from_origin(cir211, flagship_barrier):
    cfg = SimConfig((2.0,), 0.01, 6.0, 2000, seed=4)
    tr = assumption3_functional(cir211, flagship_barrier, cfg, certified=True)
    assert tr.meta["plateau_ok"] and not tr.meta["advisory"]


def test_assumption3_advisory_for_uncertified(cir111):
    b = make_power_exp_barrier(1, 0.5, 0.5)
    tr = assumption3_functional(cir111, b, SimConfig((1.0,), 0.02, 3.0, 200), certified=False)
    assert tr.meta["advisory"] and "plateau_ratio" in tr.meta


def test_plateau_check():
    assert plateau_check([0, 1, 2], [1.0, 2.0, 2.1]) == (True, 1.05)
    assert not plateau_check([0, 1, 2], [1.0, 1.0, 3.0])[0]


def test_trace_csv(tmp_path, cir211, flagship_barrier):
    tr = simulate_functional(cir211, SimConfig((1.0,), 0.01, 1.0, 20), reciprocal_barrier(flagship_barrier))
    rep = check_gronwall_envelope(tr, (1.0,), 2.6, flagship_barrier)
    write_trace_csv(tmp_path / "t.csv", tr, rep)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["time", "mean", "se", "envelope", "slack"]
    assert len(rows) == len(tr.times) + 1
    assert float(rows[1][1]) == tr.mean[0]
