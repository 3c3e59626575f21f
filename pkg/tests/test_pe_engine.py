import json
import math

import numpy as np
import pytest

import oracle_values as ov
from pelab.errors import ContractError
from pelab.io_util import dumps
from pelab.pe_engine import (
    AnnulusGrid,
    CertificateMap,
    Counterexample,
    PECertificate,
    certificate_from_dict,
    certificate_map,
    classical_pe_certificate,
    filtered_pe_check,
    mornar_scalar_pe,
    pointwise_pe_scan,
    power_certificate,
    sphere_directions,
    udpe_certificate,
    window_starts,
)
from pelab.signal_model import StateFunction, TimeSignal, named_signal, named_state_function

TWO_PI = 2 * math.pi
PERIOD_STARTS = np.linspace(0.0, TWO_PI, 9)


def x2_wrt(n1):
    return named_state_function("coordinate", n=2, n1=n1, index=1)


def test_classical_sin_cos_is_pi():
    c = classical_pe_certificate(named_signal("sin_cos"), TWO_PI, t_grid=np.linspace(0, 4 * math.pi, 17))
    assert c.ok and c.kind == "classical_gram"
    assert c.mu == pytest.approx(math.pi, abs=1e-4)
    assert all(e["value"] >= c.mu for e in c.evidence)
    assert c.T <= c.valid_t_range[1] - c.valid_t_range[0]


def test_classical_constant_direction_is_counterexample():
    S = named_signal("constant", value=[1.0, 0.0])
    c = classical_pe_certificate(S, 1.0, t_grid=[0.0, 1.0])
    assert not c.ok and c.reason == "below_floor"
    assert c.value == pytest.approx(0.0, abs=1e-12)


def test_classical_inverse_time_minimum_at_last_start():
    S = named_signal("inverse_time")
    c = classical_pe_certificate(S, 1.0, t_grid=np.linspace(0, 100, 11))
    assert c.mu == pytest.approx(ov.INVERSE_TIME_GRAM_100_1, rel=1e-8)
    assert c.evidence[-1]["value"] == c.mu
    vals = [e["value"] for e in c.evidence]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_classical_empty_grid_raises():
    with pytest.raises(ContractError):
        classical_pe_certificate(named_signal("sin"), 1.0, t_grid=[])


def test_udpe_psi_unit_circle():
    g = AnnulusGrid.build(2, 0, 1.0, 1.0, PERIOD_STARTS)
    c = udpe_certificate(named_state_function("eg31_psi"), g, TWO_PI)
    assert c.ok and c.T == TWO_PI
    assert c.mu == pytest.approx(4.0, abs=1e-3)


def test_udpe_x2_wrt_x1_counterexample_at_e1():
    g = AnnulusGrid.build(1, 1, 1.0, 1.0, PERIOD_STARTS)
    c = udpe_certificate(x2_wrt(1), g, TWO_PI)
    assert not c.ok
    assert c.x == [1.0, 0.0]
    assert c.value == 0.0


@pytest.mark.parametrize("T", [0.5, 2.0, TWO_PI])
def test_udpe_x2_wrt_x2_gives_T_delta(T):
    f = x2_wrt(1).reorder([1, 0], 1)
    g = AnnulusGrid.build(1, 1, 1.0, 3.0, PERIOD_STARTS)
    c = udpe_certificate(f, g, T)
    assert c.ok
    assert c.mu == pytest.approx(T * 1.0, rel=1e-9)


def test_udpe_grid_partition_must_match():
    g = AnnulusGrid.build(2, 0, 1.0, 1.0, PERIOD_STARTS)
    with pytest.raises(ContractError):
        udpe_certificate(x2_wrt(1), g, 1.0)


def test_udpe_witness_independent_of_threads():
    g = AnnulusGrid.build(1, 1, 0.5, 1.0, PERIOD_STARTS)
    a = udpe_certificate(x2_wrt(1), g, 1.0, threads=1)
    b = udpe_certificate(x2_wrt(1), g, 1.0, threads=4)
    assert a.to_dict() == b.to_dict()


def test_annulus_grid_validates_bounds():
    with pytest.raises(ContractError):
        AnnulusGrid(1.0, 2.0, np.array([[0.5]]), np.zeros((1, 0)), [0.0])
    with pytest.raises(ContractError):
        AnnulusGrid(1.0, 2.0, np.array([[1.5]]), np.array([[3.0]]), [0.0])
    with pytest.raises(ContractError):
        AnnulusGrid(2.0, 1.0, np.array([[1.5]]), np.zeros((1, 0)), [0.0])
    g = AnnulusGrid.build(2, 0, 1.0, 2.0, [0.0])
    assert g.x2_samples.shape == (1, 0)


def test_sphere_directions_are_unit():
    for n in (1, 2, 3, 5):
        d = sphere_directions(n)
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)


def test_window_starts_fit_inside_interval():
    s = window_starts(0.0, 10.0, 2.0)
    assert s[0] == 0.0 and s[-1] <= 8.0 + 1e-12
    with pytest.raises(ContractError):
        window_starts(0.0, 1.0, 2.0)


def test_pointwise_psi_half_period_suffices():
    c = pointwise_pe_scan(named_state_function("eg31_psi"), [1.0, 0.0], 4 * math.pi, T0=math.pi)
    assert c is not None
    assert c.T <= TWO_PI and c.mu >= 2.0 - 1e-6


def test_pointwise_zero_function_none():
    z = named_state_function("zero", n=1)
    assert pointwise_pe_scan(z, [1.0], 8.0) is None


def test_pointwise_constant_integrand():
    f = x2_wrt(1).reorder([1, 0], 1)
    c = pointwise_pe_scan(f, [1.0, 0.0], 8.0, T0=1.0)
    assert c.T == 1.0 and c.mu == pytest.approx(1.0)


def test_pointwise_requires_nonzero_x1():
    with pytest.raises(ContractError):
        pointwise_pe_scan(named_state_function("eg31_psi", n1=1), [0.0, 1.0], 4.0)


def test_grid_certificate_bounds_pointwise_answers():
    # a grid certificate (T, mu) is achievable pointwise at every grid state
    f = named_state_function("eg31_psi")
    g = AnnulusGrid.build(2, 0, 0.5, 1.0, PERIOD_STARTS, n_dir=6)
    c = udpe_certificate(f, g, TWO_PI)
    for x in g.points():
        p = pointwise_pe_scan(f, x, TWO_PI, T0=math.pi / 2)
        assert p is not None and p.T <= c.T


def test_certificate_map_psi():
    m = certificate_map(named_state_function("eg31_psi"), 2.0, [0.5, 1.0, 2.0], T0=TWO_PI)
    assert isinstance(m, CertificateMap)
    np.testing.assert_allclose(m.gamma, [2.0, 4.0, 8.0], rtol=1e-3)
    np.testing.assert_allclose(m.theta, [TWO_PI] * 3)
    assert m.gamma_at(0.0) == 0.0
    assert m.gamma_at(1.0) <= 4.0 + 1e-9
    assert CertificateMap.from_dict(json.loads(dumps(m.to_dict()))).to_dict() == m.to_dict()


def test_certificate_map_x2_wrt_x1_not_udpe():
    m = certificate_map(x2_wrt(1), 1.0, [0.5, 1.0], T0=TWO_PI)
    assert isinstance(m, Counterexample) and m.reason == "not_udpe"
    assert m.x == [0.5, 0.0]


def test_certificate_map_rejects_nonmonotone():
    with pytest.raises(ContractError):
        CertificateMap(1.0, [0.5, 1.0], [1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ContractError):
        CertificateMap(1.0, [0.5, 1.0], [2.0, 1.0], [2.0, 1.0])


def test_power_certificate_examples():
    base = PECertificate("udpe_annulus", TWO_PI, 4.0, (0.0, TWO_PI))
    assert power_certificate(base, 2).mu == pytest.approx(ov.POWER2_FROM_4_2PI, rel=1e-12)
    assert ov.SIN_SQ_PERIOD >= ov.POWER2_FROM_4_2PI
    unit = PECertificate("udpe_annulus", 1.0, 1.0, (0.0, 1.0))
    assert power_certificate(unit, 3).mu == pytest.approx(1.0)
    near = PECertificate("udpe_annulus", 1.0, 3.0, (0.0, 1.0))
    assert power_certificate(near, 1.001).mu == pytest.approx(3.0, rel=0.01)
    mus = [power_certificate(base, p).mu for p in (1.5, 2.0, 3.0)]
    assert mus[0] >= mus[1] >= mus[2] or base.mu > base.T
    with pytest.raises(ContractError):
        power_certificate(base, 1.0)


def test_power_monotone_when_mu_below_T():
    base = PECertificate("udpe_annulus", TWO_PI, 4.0, (0.0, TWO_PI))
    mus = [power_certificate(base, p).mu for p in (1.5, 2.0, 3.0)]
    assert mus[0] >= mus[1] >= mus[2]


def test_certificate_json_round_trip():
    c = classical_pe_certificate(named_signal("sin_cos"), TWO_PI, t_grid=[0.0, 1.0])
    d = json.loads(dumps(c.to_dict()))
    assert set(d) == {"kind", "T", "mu", "valid_t_range", "evidence", "params"}
    assert certificate_from_dict(d).to_dict() == json.loads(dumps(c.to_dict()))
    x = classical_pe_certificate(named_signal("constant", value=[1.0, 0.0]), 1.0, t_grid=[0.0])
    d = json.loads(dumps(x.to_dict()))
    assert d["status"] == "counterexample"
    assert certificate_from_dict(d).reason == "below_floor"


def test_filtered_sin_through_unit_filter():
    f = StateFunction(lambda ts, x: np.sin(ts), 1, 1, (0.0, math.inf), "sin", vectorized=True)
    c = filtered_pe_check(f, lambda t, pf: 1.0, [1.0], [0.0], T0=TWO_PI)
    assert c.ok
    assert c.mu == pytest.approx(ov.FILTERED_SIN_MU, rel=0.01)


def test_filtered_zero_input_zero_state():
    z = named_state_function("zero", n=1)
    c = filtered_pe_check(z, lambda t, pf: 1.0, [1.0], [0.0], horizon=60.0)
    assert not c.ok


def test_filtered_decaying_state_fails_late():
    z = named_state_function("zero", n=1)
    c = filtered_pe_check(z, lambda t, pf: 1.0, [1.0], [1.0], horizon=80.0, burn_in=40.0)
    assert not c.ok and c.value < 1e-8


def test_filtered_bound_violation_is_reported():
    f = StateFunction(lambda ts, x: np.ones_like(ts) * 10, 1, 1, (0.0, math.inf), "ten", vectorized=True)
    c = filtered_pe_check(f, lambda t, pf: 1.0, [1.0], [0.0], horizon=20.0, bound=1.0)
    assert not c.ok and c.reason == "hypothesis_violation"


def test_mornar_identity_signal():
    S = named_signal("constant", value=1.0)
    c = mornar_scalar_pe(S, [np.ones(1)], [0.0, 5.0, 10.0], 10.0)
    assert c.ok and c.mu == pytest.approx(1.0, abs=1e-9)
    assert c.params["b"] == pytest.approx(0.0, abs=1e-9)


def test_mornar_abs_sin():
    S = named_signal("abs_sin")
    c = mornar_scalar_pe(S, [np.ones(1)], [0.0, 10.0, 50.0, 100.0], TWO_PI)
    assert c.mu == pytest.approx(ov.MEAN_ABS_SIN, abs=1e-4)
    assert c.params["b"] >= -ov.MEAN_ABS_SIN * math.pi - 1e-9


def test_mornar_inverse_time_counterexample():
    S = named_signal("inverse_time")
    c = mornar_scalar_pe(S, [np.ones(1)], [0, 10, 20, 50, 100, 200], TWO_PI)
    assert not c.ok and c.reason == "decaying_rate" and c.value == 0.0


def test_mornar_input_validation():
    S = named_signal("sin")
    with pytest.raises(ContractError):
        mornar_scalar_pe(S, [], [0.0], 1.0)
    with pytest.raises(ContractError):
        mornar_scalar_pe(S, [np.array([2.0])], [0.0], 1.0)
