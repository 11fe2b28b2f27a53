import math

import numpy as np
import pytest
import sympy as sp
from scipy import integrate
from scipy.integrate import trapezoid

from parabolic_expansion.algebra import Polynomial
from parabolic_expansion.basis import (
    CoefficientField,
    ExpansionScheme,
    centered_expansion,
    expand_enhanced,
    expand_hermite,
    expand_taylor,
    expand_time_taylor,
    mean_path,
)
from parabolic_expansion.errors import ModelError

x0 = sp.Symbol("x0")
t_ = sp.Symbol("t")


def field_1d(expr, **kw):
    return CoefficientField.from_sympy(1, {(2,): expr}, [x0], max_order=kw.pop("max_order", 6), **kw)


def poly_close(p: Polynomial, q: Polynomial, tol=1e-12):
    diff = p - q
    return diff.is_zero() or diff.max_abs_coefficient() < tol


def test_taylor_terms_of_a_quadratic():
    f = field_1d(0.5 + x0**2)
    assert poly_close(expand_taylor(f, [0.0], 0, 0.0)[(2,)], Polynomial.constant(1, 0.5))
    assert expand_taylor(f, [0.0], 1, 0.0)[(2,)].is_zero()
    x = Polynomial.variable(1, 0)
    assert poly_close(expand_taylor(f, [0.0], 2, 0.0)[(2,)], x * x)
    # around 1: 1.5 + 2 (x - 1) + (x - 1)^2
    assert poly_close(expand_taylor(f, [1.0], 1, 0.0)[(2,)], (x - 1.0).scale(2.0))
    assert poly_close(expand_taylor(f, [1.0], 2, 0.0)[(2,)], (x - 1.0) * (x - 1.0))


def test_taylor_first_term_of_tanh():
    f = field_1d(0.5 + 0.1 * sp.tanh(x0))
    p = expand_taylor(f, [0.0], 1, 0.0)[(2,)]
    assert poly_close(p, Polynomial.variable(1, 0).scale(0.1), 1e-15)


def test_leading_term_is_constant_for_every_scheme():
    f = field_1d(0.5 * (0.2 + 0.1 * sp.tanh(x0)) ** 2)
    for kind in ("taylor", "enhanced_taylor", "time_taylor", "hermite"):
        terms = centered_expansion(f, ExpansionScheme(kind, 3), 0.0, [0.3])
        assert terms[0][(2,)].degree() <= 0


def test_taylor_remainder_rate():
    expr = 0.3 + 0.1 * sp.sin(2 * x0)
    f = field_1d(expr)
    exact = sp.lambdify(x0, expr)
    center = 0.2
    for N in (1, 2, 3):
        partial = sum((expand_taylor(f, [center], n, 0.0)[(2,)] for n in range(1, N + 1)),
                      expand_taylor(f, [center], 0, 0.0)[(2,)])
        hs = np.array([0.1, 0.05, 0.025])
        errs = [abs(exact(center + h) - partial(np.array([[center + h]]))[0]) for h in hs]
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert slope == pytest.approx(N + 1, abs=0.2)


def test_enhanced_groups_collect_orders():
    f = field_1d(1.0 + x0**3)
    p = expand_enhanced(f, [0.0], [3], 1, 0.0)[(2,)]
    assert poly_close(p, Polynomial.monomial(1, (3,)))


def test_enhanced_with_unit_groups_equals_taylor_exactly():
    f = CoefficientField.from_sympy(
        2, {(2, 0): 0.5 + 0.1 * sp.tanh(x0), (0, 2): 0.3 + 0.05 * sp.cos(x0 * sp.Symbol("x1")),
            (1, 1): 0.02 * sp.Symbol("x1"), (1, 0): 0.1 * sp.sin(x0)},
        [x0, sp.Symbol("x1")], max_order=4)
    center = [0.2, -0.1]
    for n in range(4):
        a = expand_enhanced(f, center, [1, 2, 3], n, 0.0)
        b = expand_taylor(f, center, n, 0.0)
        assert a == b


def test_time_taylor_linear_coefficient():
    expr = 0.5 + 0.1 * x0
    f = field_1d(expr)
    path = lambda s: np.array([0.2 + s])
    p0 = expand_time_taylor(f, path, 0, 0.5)[(2,)]
    p1 = expand_time_taylor(f, path, 1, 0.5)[(2,)]
    assert p0(np.array([[0.0]]))[0] == pytest.approx(0.5 + 0.1 * 0.7)
    assert poly_close(p1, (Polynomial.variable(1, 0) - 0.7).scale(0.1))


def test_mean_path_moves_with_drift():
    f = CoefficientField.from_sympy(1, {(2,): sp.Float(0.02), (1,): sp.Float(0.3)}, [x0])
    path = mean_path(f, [0.1], 0.0)
    assert path(2.0)[0] == pytest.approx(0.1 + 0.6)


def test_hermite_reproduces_polynomial_coefficients():
    expr = 0.4 + 0.1 * x0 - 0.05 * x0**2
    f = field_1d(expr)
    center = [0.3]
    for N in (2, 3):
        herm = sum((expand_hermite(f, center, None, n, 0.0)[(2,)] for n in range(N + 1)), Polynomial.zero(1))
        tay = sum((expand_taylor(f, center, n, 0.0)[(2,)] for n in range(N + 1)), Polynomial.zero(1))
        assert poly_close(herm, tay, 1e-10)


def test_hermite_projection_of_abs():
    f = CoefficientField(1, {(2,): lambda t, x: np.abs(np.asarray(x)[..., 0]) if np.ndim(x) > 1 else abs(float(x[0]))},
                         derivative_order=0)
    weight = lambda y: math.exp(-0.5 * y * y) / math.sqrt(2 * math.pi)
    # <H_2, |x|> with H_2 = (x^2 - 1)/sqrt(2)
    ref = integrate.quad(lambda y: abs(y) * (y * y - 1) / math.sqrt(2) * weight(y), -40, 40, points=[0.0])[0]
    # the kink limits Gauss-Hermite to first-order convergence in the node count
    gaps = []
    for q in (60, 240):
        p2 = expand_hermite(f, [0.0], None, 2, 0.0, quadrature_order=q)[(2,)]
        gaps.append(abs(p2.coefficient((2,)) - ref / math.sqrt(2)))
    assert gaps[0] < 5e-3
    assert gaps[1] < gaps[0] / 3
    # weighted L2 error of the partial sums decreases
    errs = []
    ys = np.linspace(-6, 6, 4001)
    for N in (0, 2, 4, 6):
        s = sum((expand_hermite(f, [0.0], None, n, 0.0)[(2,)] for n in range(N + 1)), Polynomial.zero(1))
        r = (np.abs(ys) - s(ys[:, None])) ** 2 * np.exp(-0.5 * ys**2)
        errs.append(trapezoid(r, ys))
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_finite_difference_derivatives_match_analytic():
    expr = 0.3 + 0.1 * sp.tanh(x0)
    g = field_1d(expr)
    fd = CoefficientField(1, {(2,): g.coefficients[(2,)]})
    for n in (1, 2, 3):
        a = g.derivative((2,), (n,), 0.0, [0.4])
        b = fd.derivative((2,), (n,), 0.0, [0.4])
        assert b == pytest.approx(a, abs=10.0 ** (-9 + 2 * n))


def test_missing_derivative_order_is_a_model_error():
    f = field_1d(0.5 + 0.1 * sp.tanh(x0), max_order=1)
    with pytest.raises(ModelError):
        expand_taylor(f, [0.0], 2, 0.0)


def test_ellipticity_violation_rejected():
    with pytest.raises(ModelError):
        field_1d(0.5 * x0**2, ellipticity=10.0)


def test_time_dependent_field_is_flagged():
    f = CoefficientField.from_sympy(1, {(2,): 0.5 + 0.1 * t_}, [x0], t_)
    assert not f.time_homogeneous
    assert f.value((2,), 1.0, np.array([0.0])) == pytest.approx(0.6)


def test_bad_generator_slot():
    with pytest.raises(ModelError):
        CoefficientField(1, {(3,): lambda t, x: 1.0})
