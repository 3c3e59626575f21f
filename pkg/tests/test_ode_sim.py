import math

import numpy as np
import pytest

import oracle_values as ov
from pelab.errors import ContractError, DomainError
from pelab.ode_sim import (
    OdeSystem,
    integrate,
    integrate_many,
    richardson_check,
    sample,
    sample_many,
    system_state_function,
    trajectory_to_csv,
)
from pelab.system_catalog import make_exp_decay, make_inverse_time_decay, make_rotation


def test_exp_decay_one_second():
    tr = integrate(make_exp_decay(), 0.0, [1.0], 1.0, 1e-2)
    assert tr.states[-1, 0] == pytest.approx(ov.EXP_MINUS_ONE, abs=1e-9)
    assert tr.times[-1] == 1.0


def test_rotation_preserves_norm():
    tr = integrate(make_rotation(), 0.0, [1.0, 0.0], 10.0, 1e-3)
    assert np.max(np.abs(tr.norms() - 1.0)) < 1e-9


def test_short_last_step_lands_on_t_end():
    tr = integrate(make_exp_decay(), 0.0, [1.0], 1.05, 0.1)
    assert tr.times[-1] == 1.05
    assert tr.states[-1, 0] == pytest.approx(math.exp(-1.05), abs=1e-6)


def test_escape_truncates_and_flags():
    blow = OdeSystem(lambda t, x: x * x, 1, "blowup")
    tr = integrate(blow, 0.0, [1.0], 2.0, 1e-3)
    assert tr.escaped and tr.t_end < 1.0 + 1e-2
    assert np.all(np.abs(tr.states) <= 1e6)


def test_nonfinite_rhs_flags_not_finite():
    bad = OdeSystem(lambda t, x: np.full_like(x, np.nan) if t >= 1.0 else x, 1, "pole")
    tr = integrate(bad, 0.0, [1.0], 2.0, 0.25)
    assert tr.escaped and not tr.finite


def test_contract_errors():
    with pytest.raises(ContractError):
        integrate(make_exp_decay(), 0.0, [1.0], 1.0, 0.0)
    with pytest.raises(ContractError):
        integrate(make_exp_decay(), 1.0, [1.0], 1.0, 0.1)
    with pytest.raises(ContractError):
        integrate(make_exp_decay(), 0.0, [1.0, 2.0], 1.0, 0.1)


def test_batch_matches_single():
    sys = make_inverse_time_decay(2)
    starts = [(0.0, [1.0, 0.0]), (3.0, [0.0, 2.0]), (10.0, [1.0, 1.0])]
    many = integrate_many(sys, starts, 5.0, 1e-2)
    for (t0, x0), tr in zip(starts, many):
        one = integrate(sys, t0, x0, t0 + 5.0, 1e-2)
        np.testing.assert_allclose(tr.states, one.states, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(tr.times, one.times)


def test_batch_escape_only_retires_offender():
    sys = OdeSystem(lambda t, x: x, 1, "grow", rhs_batch=lambda ts, X: X)
    a, b = integrate_many(sys, [(0.0, [1.0]), (0.0, [1e-8])], 20.0, 1e-2)
    assert a.escaped and not b.escaped
    assert b.t_end == pytest.approx(20.0)


def test_hermite_sampling_is_accurate():
    tr = integrate(make_exp_decay(), 0.0, [1.0], 2.0, 0.05)
    for t in (0.013, 0.77, 1.999):
        assert sample(tr, t)[0] == pytest.approx(math.exp(-t), abs=1e-6)
    ts = np.linspace(0, 2, 31)
    np.testing.assert_allclose(sample_many(tr, ts)[:, 0], np.exp(-ts), atol=1e-6)
    with pytest.raises(DomainError):
        sample(tr, 2.5)


def test_richardson_estimate_small_and_infinite_on_escape():
    err = richardson_check(make_rotation(), 0.0, [1.0, 0.0], 10.0, 1e-2)
    assert 0 < err < 1e-9
    blow = OdeSystem(lambda t, x: x * x, 1, "blowup")
    assert richardson_check(blow, 0.0, [1.0], 2.0, 1e-2) == math.inf


def test_rk4_is_fourth_order():
    sys = make_rotation()
    errs = []
    for h in (0.1, 0.05):
        tr = integrate(sys, 0.0, [1.0, 0.0], 5.0, h)
        errs.append(np.linalg.norm(tr.states[-1] - [math.cos(5.0), math.sin(5.0)]))
    assert errs[0] / errs[1] == pytest.approx(16.0, abs=2.0)


def test_csv_round_trip(tmp_path):
    tr = integrate(make_rotation(), 0.0, [1.0, 0.0], 0.1, 0.05)
    text = trajectory_to_csv(tr, tmp_path / "t.csv")
    lines = text.strip().split("\n")
    assert lines[0] == "t,x1,x2"
    assert len(lines) == tr.times.size + 1
    back = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back[:, 1:], tr.states)


def test_system_state_function_matches_rhs():
    sys = make_inverse_time_decay(2)
    f = system_state_function(sys, 2, (0.0, 10.0))
    x = np.array([1.0, -2.0])
    for t in (0.0, 3.0):
        np.testing.assert_allclose(f.eval(t, x), sys.rhs(t, x))
