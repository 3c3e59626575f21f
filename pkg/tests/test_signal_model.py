import math

import numpy as np
import pytest

import oracle_values as ov
from pelab.errors import ContractError, DomainError, EvaluationError
from pelab.signal_model import (
    QuadratureSpec,
    StateFunction,
    TimeSignal,
    along_path,
    min_eigenvalue,
    named_signal,
    named_state_function,
    signal_from_csv,
    signal_from_samples,
    window_gram,
    window_integral_norm,
    window_nodes,
)

TWO_PI = 2 * math.pi


@pytest.fixture
def psi():
    return named_state_function("eg31_psi")


def test_psi_window_integral_at_e1(psi):
    assert window_integral_norm(psi, [1.0, 0.0], 0.0, TWO_PI) == pytest.approx(ov.ABS_SIN_PERIOD, abs=1e-9)


@pytest.mark.parametrize("t,T,expected", [(0.0, math.pi, ov.ABS_SIN_HALF_PERIOD),
                                          (0.3, 2.0, ov.ABS_SIN_WINDOW_0P3_2),
                                          (1.0, 7.0, ov.ABS_SIN_WINDOW_1_7)])
def test_psi_window_integral_partial_windows(psi, t, T, expected):
    # windows containing kinks of |sin| lose Simpson's order; default step still gives 1e-6
    assert window_integral_norm(psi, [1.0, 0.0], t, T) == pytest.approx(expected, abs=1e-6)


def test_zero_function_integrates_to_zero():
    z = named_state_function("zero", n=3)
    assert window_integral_norm(z, [1.0, 2.0, 3.0], 5.0, 2.5) == 0.0


def test_psi_along_its_circle_is_zero(psi):
    f = along_path(psi, named_signal("cos_sin"))
    assert abs(window_integral_norm(f, [0.0], 0.0, TWO_PI)) <= 1e-9


def test_along_path_rejects_dimension_mismatch(psi):
    f = along_path(psi, named_signal("sin"))
    with pytest.raises(ContractError):
        window_integral_norm(f, [0.0], 0.0, 1.0)


def test_window_outside_domain_raises(psi):
    with pytest.raises(DomainError):
        window_integral_norm(psi, [1.0, 0.0], -1.0, 1.0)


def test_nonpositive_window_raises(psi):
    with pytest.raises(ContractError):
        window_integral_norm(psi, [1.0, 0.0], 0.0, 0.0)


def test_nonfinite_evaluation_carries_location():
    f = StateFunction(lambda t, x: 1.0 / (t - 1.0) if t != 1.0 else math.inf, 1)
    with pytest.raises(EvaluationError) as info:
        window_integral_norm(f, [0.5], 0.0, 2.0, QuadratureSpec("trapezoid", 0.25))
    assert info.value.tau == 1.0
    assert info.value.x == [0.5]


def test_gram_of_sin_cos_over_a_period():
    S = named_signal("sin_cos")
    for t in (0.0, 1.3):
        G = window_gram(S, t, TWO_PI)
        np.testing.assert_allclose(G, ov.SIN_SQ_PERIOD * np.eye(2), atol=1e-9)
    assert abs(ov.SIN_COS_PERIOD) < 1e-30


def test_gram_of_zero_signal():
    S = TimeSignal(lambda t: np.zeros(3))
    np.testing.assert_array_equal(window_gram(S, 0.0, 1.0), np.zeros((3, 3)))


def test_gram_is_symmetric_exactly():
    S = named_signal("trig", coeffs=[[1.0, 0.3], [0.2, -1.0], [0.5, 0.5]], omegas=[1.0, 2.7])
    G = window_gram(S, 0.4, 3.1)
    np.testing.assert_array_equal(G, G.T)


@pytest.mark.parametrize("M,expected", [(math.pi * np.eye(2), math.pi),
                                        (np.diag([4.0, 8.0 / math.pi]), ov.EIG_DIAG_4_8_OVER_PI),
                                        (np.zeros((2, 2)), 0.0)])
def test_min_eigenvalue_examples(M, expected):
    assert min_eigenvalue(M) == pytest.approx(expected, abs=1e-12)


def test_min_eigenvalue_rejects_asymmetric():
    with pytest.raises(ContractError):
        min_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_simpson_pads_to_even_subintervals():
    nodes, w = window_nodes(0.0, 1.0, QuadratureSpec("simpson", 0.3))
    assert (len(nodes) - 1) % 2 == 0
    assert w.sum() == pytest.approx(1.0)


def test_quadrature_rejects_bad_spec():
    with pytest.raises(ContractError):
        QuadratureSpec("gauss")
    with pytest.raises(ContractError):
        QuadratureSpec("simpson", -1.0)


def test_trapezoid_error_shrinks_quadratically(psi):
    # smooth integrand (window avoids the kink of |sin|)
    errs = []
    for h in (0.1, 0.05, 0.025):
        v = window_integral_norm(psi, [1.0, 0.0], 0.3, 2.0, QuadratureSpec("trapezoid", h))
        errs.append(abs(v - ov.ABS_SIN_WINDOW_0P3_2))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_signal_from_samples_interpolates_linearly():
    S = signal_from_samples([0.0, 1.0, 2.0], [[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
    np.testing.assert_allclose(S.eval(0.5).ravel(), [1.0, 2.0])
    with pytest.raises(DomainError):
        S.eval(2.5)


def test_signal_from_csv(tmp_path):
    p = tmp_path / "sig.csv"
    p.write_text("t,a,b\n0,0,1\n1,1,1\n2,0,1\n")
    S = signal_from_csv(p)
    np.testing.assert_allclose(S.eval(0.5).ravel(), [0.5, 1.0])
    assert window_gram(S, 0.0, 2.0)[1, 1] == pytest.approx(2.0)


def test_evaluation_is_pure(psi):
    a = psi.eval_times(np.linspace(0, 5, 11), [0.3, -0.7])
    b = psi.eval_times(np.linspace(0, 5, 11), [0.3, -0.7])
    np.testing.assert_array_equal(a, b)


def test_state_function_partition_validated():
    with pytest.raises(ContractError):
        StateFunction(lambda t, x: x, 2, 3)


def test_reorder_moves_coordinates_to_front():
    f = named_state_function("coordinate", n=2, index=1)
    g = f.reorder([1, 0], 1)
    assert g.eval(0.0, [5.0, 7.0])[0] == 5.0
