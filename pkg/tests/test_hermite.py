import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onestep.hermite import (ACTIVATION_NAMES, HermiteCoeffs, NonCenteredActivationWarning, gaussian_expectation,
                             gaussian_nodes, get_activation, hermite_coeffs, hermite_combo, hermite_eval,
                             hermite_norms, hermite_series, hermite_series_derivative, hermite_table,
                             monomial_to_hermite)

# Independent oracle: mpmath.quad at 40 digits on the physicists' polynomials,
# converted with He_k(x) = 2^{-k/2} H_k(x / sqrt 2).
TANH_C1 = 0.6057055096021588
TANH_C3 = -0.06059922938016236
TANH_C5 = 0.005709781612574324
TANH_VAR = 0.39429449039784117
SIGMOID_C1 = 0.20662096414190704
SIGMOID_C3 = -0.010399413993209866


def relu_coeff(k):
    # closed form for max(x, 0) - E max(Z, 0): c_1 = 1/2, odd k >= 3 vanish and
    # c_k = (-1)^(k/2 + 1) (k - 3)!! / (sqrt(2 pi) k!) for even k >= 2
    if k == 1:
        return 0.5
    if k % 2 or k == 0:
        return 0.0
    dfact = math.prod(range(k - 3, 0, -2)) if k > 3 else 1
    return (-1) ** (k // 2 + 1) * dfact / (math.sqrt(2 * math.pi) * math.factorial(k))


def test_recurrence_matches_explicit_low_degrees():
    x = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(hermite_eval(2, x), x ** 2 - 1)
    np.testing.assert_allclose(hermite_eval(3, x), x ** 3 - 3 * x)
    np.testing.assert_allclose(hermite_eval(4, x), x ** 4 - 6 * x ** 2 + 3)


def test_table_agrees_with_single_evaluation():
    x = np.linspace(-4, 4, 9)
    table = hermite_table(10, x)
    for k in range(11):
        np.testing.assert_allclose(table[k], hermite_eval(k, x), rtol=1e-13, atol=1e-12)


def test_degree_out_of_range():
    with pytest.raises(ValueError):
        hermite_eval(65, 0.0)
    with pytest.raises(ValueError):
        hermite_table(-1, 0.0)


def test_orthogonality_to_1e9():
    nodes, weights = gaussian_nodes(200)
    for j in range(17):
        for k in range(17):
            val = np.dot(weights, hermite_eval(j, nodes) * hermite_eval(k, nodes))
            expected = math.factorial(k) if j == k else 0.0
            assert abs(val - expected) / math.sqrt(math.factorial(j) * math.factorial(k)) < 1e-9


def test_nodes_are_read_only():
    nodes, weights = gaussian_nodes(40)
    with pytest.raises(ValueError):
        nodes[0] = 1.0
    assert abs(weights.sum() - 1.0) < 1e-14


def test_relu_coefficients_match_closed_form():
    c = get_activation("relu_shifted").coeffs
    for k in range(c.K + 1):
        assert abs(c[k] - relu_coeff(k)) < 1e-13
    assert abs(c.c2 - 1 / (2 * math.sqrt(2 * math.pi))) < 1e-14
    # Var relu(Z) = 1/2 - 1/(2 pi), so c_{>1}^2 = 1/4 - 1/(2 pi)
    assert abs(c.c_gt1 ** 2 - (0.25 - 1 / (2 * math.pi))) < 1e-13


def test_smooth_activations_match_mpmath_oracle():
    t = get_activation("tanh").coeffs
    assert abs(t.c1 - TANH_C1) < 1e-12 and abs(t[3] - TANH_C3) < 1e-12 and abs(t[5] - TANH_C5) < 1e-12
    assert abs(t.c_total ** 2 - TANH_VAR) < 1e-12
    s = get_activation("sigmoid_shifted").coeffs
    assert abs(s.c1 - SIGMOID_C1) < 1e-12 and abs(s[3] - SIGMOID_C3) < 1e-12


@pytest.mark.parametrize("name", ["tanh", "sigmoid_shifted"])
def test_odd_activations_have_no_even_coefficients(name):
    c = get_activation(name).coeffs
    assert np.all(np.abs(c.coeffs[0::2]) < 1e-14)


def test_identity_is_he1():
    c = get_activation("identity").coeffs
    assert abs(c.c1 - 1) < 1e-14
    assert abs(c.c_gt1) < 1e-7


def test_parseval_norms_use_variance():
    c = HermiteCoeffs(np.array([0.0, 0.5, 0.1]), variance=1.0)
    total, gt1 = hermite_norms(c)
    assert total == pytest.approx(1.0)
    assert gt1 == pytest.approx(math.sqrt(0.75))
    truncated = HermiteCoeffs(np.array([0.0, 0.5, 0.1]))
    assert truncated.c_total ** 2 == pytest.approx(0.25 + 2 * 0.01)


def test_index_beyond_degree_is_zero():
    c = HermiteCoeffs(np.array([0.0, 1.0]))
    assert c[7] == 0.0


def test_quad_order_guard():
    with pytest.raises(ValueError):
        hermite_coeffs(np.tanh, K=16, quad_order=30)


def test_noncentered_warning():
    with pytest.warns(NonCenteredActivationWarning):
        hermite_coeffs(lambda x: np.maximum(x, 0.0), K=4, breakpoints=(0.0,))


def test_combo_roundtrip_and_derivative():
    coeffs = [0.0, 1.0, 0.5, -0.2]
    act = hermite_combo(coeffs)
    x = np.linspace(-3, 3, 31)
    expected = x + 0.5 * (x ** 2 - 1) - 0.2 * (x ** 3 - 3 * x)
    np.testing.assert_allclose(act(x), expected, atol=1e-12)
    np.testing.assert_allclose(act.derivative(x), 1 + x - 0.2 * (3 * x ** 2 - 3), atol=1e-12)
    recovered = hermite_coeffs(act.fn, K=5)
    np.testing.assert_allclose(recovered.coeffs[:4], coeffs, atol=1e-12)


def test_get_activation_errors():
    with pytest.raises(ValueError):
        get_activation("softplus")
    with pytest.raises(ValueError):
        get_activation("hermite_combo")
    assert set(ACTIVATION_NAMES) >= {"relu_shifted", "tanh", "sigmoid_shifted", "identity", "hermite_combo"}


def test_xi_small_entries():
    xi = monomial_to_hermite(4)
    # x^2 = He_2 + 1, x^3 = He_3 + 3 He_1, x^4 = He_4 + 6 He_2 + 3
    np.testing.assert_array_equal(xi[2, :3], [1, 0, 1])
    np.testing.assert_array_equal(xi[3, :4], [0, 3, 0, 1])
    np.testing.assert_array_equal(xi[4], [3, 0, 6, 0, 1])


def test_xi_roundtrip_1e10():
    xi = monomial_to_hermite(8)
    x = np.linspace(-5, 5, 101)
    for p in range(9):
        back = hermite_series(xi[p], x)
        assert np.max(np.abs(back - x ** p) / np.maximum(1, np.abs(x) ** p)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=10), st.floats(-4, 4))
def test_clenshaw_matches_direct_sum(coeffs, x):
    direct = sum(c * float(hermite_eval(k, x)) for k, c in enumerate(coeffs))
    scale = 1 + sum(abs(c) * abs(float(hermite_eval(k, x))) for k, c in enumerate(coeffs))
    assert abs(float(hermite_series(coeffs, x)) - direct) <= 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 12), st.floats(-3, 3))
def test_parity(k, x):
    assert float(hermite_eval(k, -x)) == pytest.approx((-1) ** k * float(hermite_eval(k, x)), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=8))
def test_derivative_coefficients(coeffs):
    x, h = 0.37, 1e-6
    d = hermite_series_derivative(coeffs)
    fd = (hermite_series(coeffs, x + h) - hermite_series(coeffs, x - h)) / (2 * h)
    assert float(hermite_series(d, x)) == pytest.approx(float(fd), abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=6))
def test_expectation_of_combo_square_is_parseval(coeffs):
    coeffs = [0.0] + coeffs[1:]
    act = hermite_combo(coeffs)
    second = gaussian_expectation(lambda z: act(z) ** 2, quad_order=60)
    parseval = sum(math.factorial(k) * c * c for k, c in enumerate(coeffs))
    assert second == pytest.approx(parseval, rel=1e-10, abs=1e-12)
