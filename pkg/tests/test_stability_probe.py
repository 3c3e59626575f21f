import csv
import io
import math

import numpy as np
import pytest

import oracle_values as ov
from pelab.errors import ContractError
from pelab.ode_sim import integrate, integrate_many
from pelab.pe_engine import AnnulusGrid, certificate_map
from pelab.signal_model import StateFunction, named_signal, named_state_function
from pelab.stability_probe import (
    H_MAX,
    contingency_table,
    lego_check,
    necessity_experiment,
    settling_time,
    ugs_probe,
    ules_fit,
    uniformity_probe,
    vj_plus_1,
)
from pelab.system_catalog import (
    build_system,
    make_exp_decay,
    make_gradient_adaptive,
    make_inverse_time_decay,
    make_rotation,
    make_still,
)


def const_phi(c, n=1):
    return StateFunction(lambda ts, x: np.full((np.size(ts), 1), c), n, n, label="const", vectorized=True)


def test_settling_exp_decay():
    tr = integrate(make_exp_decay(), 0.0, [1.0], 5.0, 1e-2)
    assert settling_time(tr, ov.EXP_MINUS_ONE) == pytest.approx(1.0, abs=1.01e-2)


def test_settling_zero_and_rotation():
    tr = integrate(make_still(), 0.0, [0.0], 5.0, 1e-2)
    assert settling_time(tr, 0.1) == 0.0
    tr = integrate(make_rotation(), 0.0, [1.0, 0.0], 20.0, 1e-2)
    assert settling_time(tr, 0.5) == math.inf
    with pytest.raises(ContractError):
        settling_time(tr, 0.0)


def test_settling_suffix_not_first_crossing():
    # damped oscillator leaves the ball after first entering it
    from pelab.ode_sim import OdeSystem

    A = np.array([[0.0, 1.0], [-4.0, -0.4]])
    tr = integrate(OdeSystem(lambda t, x: A @ x, 2), 0.0, [1.0, 0.0], 30.0, 1e-2)
    T = settling_time(tr, 0.5)
    first = tr.times[np.argmax(tr.norms() <= 0.5)]
    assert T > first
    assert np.all(tr.norms()[tr.times >= T] <= 0.5)


def test_settling_escaped_is_inf():
    from pelab.ode_sim import OdeSystem

    tr = integrate(OdeSystem(lambda t, x: x * x, 1), 0.0, [1.0], 2.0, 1e-3)
    assert settling_time(tr, 10.0) == math.inf


def test_uniformity_inverse_time_closed_form():
    rep = uniformity_probe(make_inverse_time_decay(), 1.0, 0.1, [0.0, 10.0, 50.0], horizon=500.0)
    assert [rep.settling[t] for t in (0.0, 10.0, 50.0)] == pytest.approx(ov.SETTLING_INVERSE_TIME, abs=0.02)
    assert rep.verdict == "non_uniform"
    assert rep.dispersion > 0.5 and rep.trend >= 0.8


def test_uniformity_exp_decay():
    rep = uniformity_probe(make_exp_decay(), 1.0, 0.1, [0.0, 10.0, 50.0], horizon=20.0)
    assert rep.verdict == "uniform" and rep.dispersion < 1e-12
    rows = list(csv.reader(io.StringIO(rep.settling_csv())))
    assert rows[0] == ["t0", "direction_index", "T"]
    assert len(rows) == 1 + 3 * 2


def test_uniformity_gradient_adaptive_sin():
    m = make_gradient_adaptive(named_signal("sin"))
    grid = [0.0, 7.3, 40.0, 100.0]
    rep = uniformity_probe(m.ode, 1.0, 0.1, grid, horizon=200.0, step=1e-2)
    half = uniformity_probe(m.ode, 1.0, 0.1, grid, horizon=200.0, step=5e-3)
    assert rep.verdict == "uniform" and rep.dispersion < 0.25
    for t in grid:
        assert rep.settling[t] == pytest.approx(half.settling[t], abs=0.05)


def test_uniformity_all_inf_is_inconclusive():
    rep = uniformity_probe(make_rotation(), 1.0, 0.5, [0.0, 5.0], horizon=10.0)
    assert rep.verdict == "inconclusive"
    assert all(v == math.inf for v in rep.settling.values())
    d = rep.to_dict()
    assert d["verdict"] == "inconclusive"


def test_ugs_envelopes():
    rep = ugs_probe(make_exp_decay(), [0.5, 1.0, 2.0], [0.0, 3.0], horizon=5.0)
    np.testing.assert_allclose(rep.envelope, [0.5, 1.0, 2.0])
    assert not rep.violation
    rep = ugs_probe(make_rotation(), [0.5, 1.0], [0.0, 3.0], horizon=10.0)
    np.testing.assert_allclose(rep.envelope, [0.5, 1.0], rtol=1e-9)
    assert rep.gamma(0.75) == pytest.approx(0.75)


def test_ugs_feedforward_finite():
    s = build_system("feedforward")
    rep = ugs_probe(s.ode, [0.5, 1.0], [0.0, 5.0], horizon=30.0)
    assert not rep.violation
    assert all(math.isfinite(v) for v in rep.envelope)
    assert rep.envelope[0] >= 0.5 and rep.envelope[1] >= 1.0


def test_ugs_escape_is_violation():
    from pelab.ode_sim import OdeSystem

    rep = ugs_probe(OdeSystem(lambda t, x: x * x, 1), [1.0], [0.0], horizon=5.0, step=1e-3)
    assert rep.violation and rep.witness is not None


def test_ules_exact_exponential():
    fit = ules_fit(make_exp_decay(2.0), 1.0, [0.0, 5.0], horizon=8.0)
    assert fit.ok
    assert fit.gamma2 == pytest.approx(2.0, abs=0.01)
    assert 1.0 <= fit.gamma1 <= 1.1


def test_ules_algebraic_decay_fails():
    fit = ules_fit(make_inverse_time_decay(), 1.0, [0.0, 5.0], horizon=20.0)
    assert not fit.ok and fit.reason


def test_ules_gradient_adaptive_envelope_valid():
    m = make_gradient_adaptive(named_signal("sin"))
    fit = ules_fit(m.ode, 0.5, [0.0, 7.3], horizon=40.0)
    assert fit.ok and fit.gamma2 > 0
    starts = [(t0, 0.5 * d) for t0 in (0.0, 7.3) for d in np.eye(2)]
    for tr in integrate_many(m.ode, starts, 40.0, 1e-2):
        env = fit.gamma1 * 0.5 * np.exp(-fit.gamma2 * (tr.times - tr.t0))
        assert np.all(tr.norms() <= env * (1 + 1e-9) + 1e-12)


def _grid(dim):
    return AnnulusGrid.build(dim, 0, 0.5, 1.0, np.linspace(0.0, 190.0, 6))


def test_necessity_exp_decay_consistent():
    s = build_system("exp_decay")
    u = uniformity_probe(s.ode, 1.0, 0.1, [0.0, 10.0, 40.0], horizon=20.0)
    rep = necessity_experiment(s.F, _grid(1), 2 * math.pi, u)
    assert rep.cell == ("uniform", "udpe") and rep.consistent


def test_necessity_inverse_time_consistent():
    s = build_system("inverse_time_decay", {"domain_t": [0, 200]})
    u = uniformity_probe(s.ode, 1.0, 0.1, [0.0, 10.0, 40.0], horizon=500.0)
    rep = necessity_experiment(s.F, _grid(1), 2 * math.pi, u)
    assert rep.cell == ("non_uniform", "not_udpe") and rep.consistent
    assert rep.decay["reason"] == "decaying_rate"


def test_necessity_rotation_udpe_but_not_attractive():
    s = build_system("rotation")
    u = uniformity_probe(s.ode, 1.0, 0.1, [0.0, 10.0], horizon=20.0)
    rep = necessity_experiment(s.F, _grid(2), 2 * math.pi, u)
    assert rep.udpe and rep.verdict == "inconclusive" and rep.consistent
    table = contingency_table([rep])
    assert table["inconclusive/udpe"] == [rep.label]
    assert table["uniform/not_udpe"] == []


def test_vj_constant_and_zero():
    r = vj_plus_1(const_phi(2.0), 0.0, [1.0], H=5.0, tol=1.0)
    assert r.value == pytest.approx(-2.0 * (1 - math.exp(-5.0)), rel=1e-10)
    r = vj_plus_1(const_phi(2.0), 0.0, [1.0], M=2.0, tol=1e-12)
    assert r.value == pytest.approx(-2.0, abs=1e-11)
    assert r.horizon <= H_MAX
    assert vj_plus_1(const_phi(0.0), 3.0, [1.0]).value == 0.0


def test_vj_abs_sin_oracle():
    phi = StateFunction(lambda ts, x: np.abs(np.sin(ts))[:, None], 1, 1, label="abs_sin",
                        vectorized=True)
    r = vj_plus_1(phi, 0.0, [1.0], H=40.0)
    assert r.value == pytest.approx(-ov.DISCOUNTED_ABS_SIN, abs=1e-8)
    assert r.value <= 0


def test_lego_zero_phi_hypothesis_unmet():
    zero = named_state_function("zero", n=1)
    cmap = certificate_map(zero, 1.0, [0.5, 1.0])
    m = make_gradient_adaptive(named_signal("sin"))
    tr = integrate(m.ode, 0.0, [0.0, 1.0], 2.0, 1e-2)
    rep = lego_check(zero, tr, cmap, 1.0, n1=1)
    assert rep.status == "hypothesis_unmet" and not rep.ok


def test_lego_origin_trajectory_zero_violation():
    m = make_gradient_adaptive(named_signal("sin"))
    cmap = certificate_map(m.B0, 2.0, [0.25, 0.5, 1.0, 2.0], T0=2 * math.pi)
    tr = integrate(m.ode, 0.0, [0.0, 0.0], 5.0, 1e-2)
    rep = lego_check(m.B0, tr, cmap, 1.0, n1=1, n_points=20)
    assert rep.max_violation == pytest.approx(0.0, abs=1e-12)


def test_lego_fd_step_must_be_below_grid():
    m = make_gradient_adaptive(named_signal("sin"))
    cmap = certificate_map(m.B0, 2.0, [0.25, 0.5, 1.0, 2.0], T0=2 * math.pi)
    tr = integrate(m.ode, 0.0, [1.0, 1.0], 5.0, 1e-2)
    with pytest.raises(ContractError):
        lego_check(m.B0, tr, cmap, 1.0, n1=1, fd_step=1e-2)


def test_lego_gradient_adaptive_holds():
    m = make_gradient_adaptive(named_signal("sin"))
    cmap = certificate_map(m.B0, 2.0, [0.25, 0.5, 1.0, 2.0], T0=2 * math.pi)
    tr = integrate(m.ode, 0.0, [1.0, 1.0], 50.0, 1e-3)
    rep = lego_check(m.B0, tr, cmap, 1.0, n1=1, n_points=100)
    assert rep.ok and rep.max_violation <= 1e-2
