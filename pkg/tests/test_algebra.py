import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_expansion.algebra import (
    MultiIndex,
    Polynomial,
    TimeMonomial,
    WeylOperator,
    compositions,
    multi_indices,
    multi_indices_upto,
    simplex_integrate,
    weyl_compose,
)

small = st.integers(min_value=0, max_value=2)
coeff = st.fractions(min_value=-5, max_value=5, max_denominator=7)


@st.composite
def operators(draw, dim):
    n = draw(st.integers(min_value=1, max_value=20))
    terms = {}
    for _ in range(n):
        beta = tuple(draw(small) for _ in range(dim))
        alpha = tuple(draw(small) for _ in range(dim))
        terms[(beta, alpha, ())] = draw(coeff)
    return WeylOperator(dim, terms)


@st.composite
def polynomials(draw, dim, max_degree=5):
    n = draw(st.integers(min_value=1, max_value=8))
    terms = {}
    for _ in range(n):
        parts = draw(st.lists(st.integers(0, max_degree), min_size=dim, max_size=dim))
        while sum(parts) > max_degree:
            i = int(np.argmax(parts))
            parts[i] -= 1
        terms[tuple(parts)] = draw(coeff)
    return Polynomial(dim, terms)


# -- multi-indices and polynomials ---------------------------------------------


def test_multi_index_basics():
    a = MultiIndex((2, 1))
    assert a.order() == 3
    assert a.factorial() == 2
    assert a + MultiIndex.unit(2, 1) == (2, 2)
    assert MultiIndex.zero(3) == (0, 0, 0)


def test_multi_indices_count():
    for d in (1, 2, 3):
        for n in range(5):
            assert len(multi_indices(d, n)) == math.comb(n + d - 1, d - 1)
    assert len(multi_indices_upto(2, 2)) == 6


def test_polynomial_arithmetic_and_evaluation():
    x = Polynomial.variable(2, 0)
    y = Polynomial.variable(2, 1)
    p = (x + y) ** 2
    assert p.coefficient((1, 1)) == 2
    assert p.degree() == 2
    pts = np.array([[1.0, 2.0], [-0.5, 3.0]])
    assert np.allclose(p(pts), (pts.sum(axis=1)) ** 2)
    assert p.derivative(0) == (x + y).scale(2)


def test_substitute_affine_shifts_argument():
    x = Polynomial.variable(1, 0)
    p = x * x
    q = p.substitute_affine([1.0])  # p(x - 1)
    assert np.isclose(q(np.array([[3.0]]))[0], 4.0)


# -- Weyl algebra --------------------------------------------------------------


def test_derivative_times_coordinate_normal_orders():
    # (x1 D1)(x1 D1) = x1^2 D1^2 + x1 D1
    xd = WeylOperator(1, {((1,), (1,), ()): 1})
    prod = weyl_compose(xd, xd)
    assert prod == WeylOperator(1, {((2,), (2,), ()): 1, ((1,), (1,), ()): 1})


def test_commutator_is_delta():
    d = 2
    for i in range(d):
        for j in range(d):
            D = WeylOperator.derivative(MultiIndex.unit(d, i))
            X = WeylOperator.multiplication(MultiIndex.unit(d, j))
            comm = weyl_compose(D, X) - weyl_compose(X, D)
            expected = WeylOperator.identity(d) if i == j else WeylOperator.zero(d)
            assert comm == expected


def test_time_monomials_multiply_in_composition():
    a = WeylOperator(1, {((0,), (1,), (1,)): 2})  # 2 (s1 - t) D
    b = WeylOperator(1, {((1,), (0,), (0, 2)): 3})  # 3 (s2 - t)^2 x
    prod = weyl_compose(a, b)
    assert prod.terms[((1,), (1,), (1, 2))] == 6
    assert prod.terms[((0,), (0,), (1, 2))] == 6
    assert prod.time_variables() == 2


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(operators(d), operators(d), operators(d))))
def test_composition_associative(ops):
    A, B, C = ops
    assert weyl_compose(weyl_compose(A, B), C) == weyl_compose(A, weyl_compose(B, C))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3).flatmap(lambda d: st.tuples(operators(d), operators(d), polynomials(d))))
def test_action_consistent_with_composition(args):
    A, B, p = args
    assert weyl_compose(A, B).apply(p) == A.apply(B.apply(p))


def test_apply_rejects_symbolic_time():
    op = WeylOperator.scalar(1, TimeMonomial(1, (1,)))
    with pytest.raises(ValueError):
        op.apply(Polynomial.constant(1, 1))


def test_relabel_and_evaluate_times():
    op = WeylOperator(1, {((0,), (0,), (2,)): 1})
    moved = op.relabel_time({1: 3})
    assert list(moved.terms) == [((0,), (0,), (0, 0, 2))]
    assert moved.evaluate_times([1.0, 1.0, 0.5]).terms[((0,), (0,), ())] == 0.25


# -- simplex integrals ---------------------------------------------------------


@pytest.mark.parametrize("h", range(1, 7))
def test_simplex_volume(h):
    one = WeylOperator.identity(1, Fraction(1))
    t, T = Fraction(1, 3), Fraction(2)
    got = simplex_integrate(one, h, t, T).terms[((0,), (0,), ())]
    assert got == (T - t) ** h / math.factorial(h)


def test_simplex_integrate_two_linear_factors():
    op = WeylOperator(1, {((0,), (0,), (1, 1)): Fraction(1)})
    t, T = Fraction(0), Fraction(3)
    got = simplex_integrate(op, 2, t, T).terms[((0,), (0,), ())]
    assert got == (T - t) ** 4 / 8


@pytest.mark.parametrize("n", range(5))
@pytest.mark.parametrize("k", range(5))
def test_beta_identity(n, k):
    # int_t^T (T - s)^n (s - t)^k ds via the nested simplex integrator:
    # (T - s)^n / n! is the volume of n ordered later times, so the integral is
    # n! times the (n+1)-variable simplex integral of (s_1 - t)^k.
    t, T = Fraction(1, 2), Fraction(5, 2)
    op = WeylOperator(1, {((0,), (0,), (k,)): Fraction(1)})
    got = math.factorial(n) * simplex_integrate(op, n + 1, t, T).terms[((0,), (0,), ())]
    beta = Fraction(math.factorial(k) * math.factorial(n), math.factorial(k + n + 1))
    assert got == beta * (T - t) ** (k + n + 1)


def test_simplex_integrate_float_mode():
    op = WeylOperator(1, {((0,), (0,), (2,)): 1.0})
    got = simplex_integrate(op, 1, 0.0, 2.0).terms[((0,), (0,), ())]
    assert got == pytest.approx(8.0 / 3.0, rel=1e-15)


def test_simplex_integrate_rejects_too_many_variables():
    op = WeylOperator(1, {((0,), (0,), (0, 1)): 1})
    with pytest.raises(ValueError):
        simplex_integrate(op, 1, 0, 1)


# -- compositions --------------------------------------------------------------


def test_compositions_of_three():
    assert compositions(3, 1) == [(3,)]
    assert compositions(3, 2) == [(1, 2), (2, 1)]
    assert compositions(3, 3) == [(1, 1, 1)]
    assert len(compositions(5, 2)) == 4


@pytest.mark.parametrize("n", range(1, 9))
def test_composition_counts(n):
    assert sum(len(compositions(n, h)) for h in range(1, n + 1)) == 2 ** (n - 1)


def test_compositions_reject_bad_arguments():
    with pytest.raises(ValueError):
        compositions(2, 3)
