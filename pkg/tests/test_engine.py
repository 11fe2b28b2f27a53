import math

import numpy as np
import pytest
import sympy as sp

from parabolic_expansion.algebra import Polynomial
from parabolic_expansion.basis import CoefficientField, ExpansionScheme
from parabolic_expansion.engine import (
    ExpansionPlan,
    approximate_kernel,
    bootstrap_solve,
    build_G,
    build_Gbar,
    build_L,
    duhamel_u1,
    fundamental_solution,
    solve,
)
from parabolic_expansion.errors import ModelError
from parabolic_expansion.gaussian import GaussHermite, apply_weyl_to_kernel, integrate_against
from parabolic_expansion.lab.presets import preset
from parabolic_expansion.oracles import exact_constant_solution, fd_price
from parabolic_expansion.payoffs import ExpCall, GaussianBump

x0, x1 = sp.symbols("x0 x1")
BUMP = GaussianBump(0.1, 0.25)


def plan(field, N, kind="taylor", **kw):
    return ExpansionPlan(field, ExpansionScheme(kind, N), **kw)


def two_dim_field():
    exprs = {
        (2, 0): 0.5 * (0.25 + 0.05 * sp.tanh(x0 + 0.5 * x1)) ** 2,
        (0, 2): 0.02 + 0.01 * x1**2,
        (1, 1): 0.01 + 0.005 * sp.sin(x0),
        (1, 0): -0.5 * (0.25 + 0.05 * sp.tanh(x0 + 0.5 * x1)) ** 2,
        (0, 1): 0.1 * (0.04 - x1),
    }
    return CoefficientField.from_sympy(2, exprs, [x0, x1], max_order=4)


# -- operator construction -----------------------------------------------------


def test_G1_for_linear_diffusion_coefficient():
    # a_2(x) = a + c x around 0: G_1(t, s) = c (x + C(t, s) D) D^2 with C = 2 a (s - t)
    a, c = 0.3, 0.2
    f = CoefficientField.from_sympy(1, {(2,): a + c * x0}, [x0])
    p = plan(f, 1)
    G = build_G(p, 1, 0.0, 0.5, center=[0.0])
    assert G.terms[((1,), (2,), ())] == pytest.approx(c)
    assert G.terms[((0,), (3,), ())] == pytest.approx(c * 2 * a * 0.5)
    assert len(G) == 2
    sym = build_G(p, 1, 0.0, center=[0.0])
    assert sym.evaluate_times([0.5]).terms == G.terms


def test_G1_acting_on_exponential():
    # G_1 e^{lam x} = c lam^2 (x + C lam) e^{lam x}
    a, c, lam, s, x = 0.3, 0.2, 1.7, 0.4, 0.35
    f = CoefficientField.from_sympy(1, {(2,): a + c * x0}, [x0])
    G = build_G(plan(f, 1), 1, 0.0, s, center=[0.0])
    total = 0.0
    for beta, alpha, tm in G.items():
        total += tm.coefficient * x ** beta[0] * lam ** alpha[0]
    assert total == pytest.approx(c * lam**2 * (x + 2 * a * s * lam))


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("n", [1, 2])
def test_G_Gbar_duality(dim, n):
    field = preset("tanh_localvol").field if dim == 1 else two_dim_field()
    p = plan(field, 2)
    center = np.full(dim, 0.1)
    fr = p.frame(center, 0.0)
    rng = np.random.default_rng(11 + n + dim)
    t, T = 0.0, 0.6
    k = fr.kernel(t, T)
    for _ in range(20):
        s = float(rng.uniform(t, T))
        x = center + 0.3 * rng.normal(size=dim)
        y = x + 0.3 * rng.normal(size=dim)
        G = build_G(p, n, t, s, center=center)
        Gb = build_Gbar(p, n, s, T, center=center)
        lhs = apply_weyl_to_kernel(G, k, x, origin=center)(y)
        rhs = apply_weyl_to_kernel(Gb, k, x, origin=center, variable="y")(y)
        assert lhs == pytest.approx(rhs, abs=1e-8)


def test_iterated_kernel_identity():
    # int Gamma_0(t,x;s,xi) [G_1^xi(s,s1) Gamma_0(s,xi;T,y)] dxi = G_1^x(t,s1) Gamma_0(t,x;T,y)
    p = plan(preset("tanh_localvol").field, 1)
    center = np.array([0.0])
    fr = p.frame(center, 0.0)
    t, s, s1, T = 0.0, 0.2, 0.35, 0.7
    x, y = np.array([0.1]), np.array([0.25])
    k_ts, k_sT, k_tT = fr.kernel(t, s), fr.kernel(s, T), fr.kernel(t, T)
    G_inner = build_G(p, 1, s, s1, center=center)

    def inner(xis):
        return np.array([apply_weyl_to_kernel(G_inner, k_sT, xi, origin=center)(y) for xi in xis])

    outer = apply_weyl_to_kernel(build_G(p, 1, 0.0, 0.0).identity(1), k_ts, x)
    lhs = integrate_against(outer, inner, GaussHermite(40))
    rhs = apply_weyl_to_kernel(build_G(p, 1, t, s1, center=center), k_tT, x, origin=center)(y)
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_L1_matches_duhamel_quadrature():
    pr = preset("tanh_localvol")
    p = plan(pr.field, 1)
    x = np.array([0.25])
    for h in (0.25, 0.5):
        u1 = solve(p, BUMP, 0.0, x, h).terms[1]
        ref = duhamel_u1(p, BUMP, 0.0, x, h)
        assert u1 == pytest.approx(ref, rel=1e-5)


def test_L_is_symmetric_in_algebra_vs_quadrature_time_integration():
    field = preset("tanh_localvol").field
    x = np.array([0.2])
    for N in (2, 3):
        a = solve(plan(field, N, time_integration="exact"), BUMP, 0.0, x, 0.5).value
        b = solve(plan(field, N, time_integration="quadrature"), BUMP, 0.0, x, 0.5).value
        assert a == pytest.approx(b, abs=1e-12)


def test_build_L_zero_is_identity():
    p = plan(preset("tanh_localvol").field, 2)
    L0 = build_L(p, 0, 0.0, 1.0)
    assert L0.terms == {((0,), (0,), ()): 1.0}


# -- exactness and consistency -------------------------------------------------


@pytest.mark.parametrize("N", range(4))
def test_black_scholes_exact(N):
    pr = preset("black_scholes")
    p = plan(pr.field, N)
    for h in (0.1, 0.5, 1.0, 2.0):
        exact = exact_constant_solution(pr.field.leading(0.0, [0.0]), ExpCall(1.0), 0.0, [0.0], h)
        assert abs(solve(p, ExpCall(1.0), 0.0, [0.0], h).value - exact) < 1e-9


def test_approximate_kernel_conserves_mass():
    p = plan(preset("tanh_localvol").field, 3)
    sol = approximate_kernel(p, 0.0, [0.1], 0.5)
    for pg in sol.terms[1:]:
        assert integrate_against(pg, lambda y: np.ones(len(y)), GaussHermite(30)) == pytest.approx(0.0, abs=1e-13)


def test_fundamental_solution_vectorized():
    p = plan(preset("tanh_localvol").field, 2)
    ys = np.linspace(-0.5, 0.5, 7)[:, None]
    batch = fundamental_solution(p, 0.0, [0.0], 0.3, ys)
    single = [fundamental_solution(p, 0.0, [0.0], 0.3, y) for y in ys]
    assert np.allclose(batch, single, rtol=1e-14)


def test_killing_discounts():
    pr = preset("killed_localvol")
    p = plan(pr.field, 2)
    sol = approximate_kernel(p, 0.0, [0.0], 1.0)
    assert sol.discount < 1.0
    undiscounted = plan(preset("tanh_localvol").field, 2)
    assert solve(p, BUMP, 0.0, [0.0], 1.0).value < solve(undiscounted, BUMP, 0.0, [0.0], 1.0).value


def test_fixed_point_cascade():
    # with a fixed expansion point, (d_t + A_0) u_1 = -A_1 u_0 (checked by central differences)
    field = preset("tanh_localvol").field
    xbar = np.array([0.0])
    p = plan(field, 1, frozen=xbar)
    T, t, x, h = 0.5, 0.1, 0.15, 1e-3
    terms = lambda tt, xx: solve(p, BUMP, tt, [xx], T).terms
    exp = p.frame(xbar, t).expansion(t)
    u = {(i, j): terms(t + i * h, x + j * h) for i in (-1, 0, 1) for j in (-1, 0, 1) if i == 0 or j == 0}
    dt = lambda n: (u[(1, 0)][n] - u[(-1, 0)][n]) / (2 * h)
    dx = lambda n: (u[(0, 1)][n] - u[(0, -1)][n]) / (2 * h)
    dxx = lambda n: (u[(0, 1)][n] - 2 * u[(0, 0)][n] + u[(0, -1)][n]) / h**2
    deriv = {(0,): lambda n: u[(0, 0)][n], (1,): dx, (2,): dxx}
    A0_u1 = sum(float(exp[0][a](np.zeros((1, 1)))[0]) * deriv[a](1) for a in exp[0])
    A1_u0 = sum(float(exp[1][a](np.array([[x - xbar[0]]]))[0]) * deriv[a](0) for a in exp[1])
    residual = dt(1) + A0_u1 + A1_u0
    assert abs(residual) < 1e-4 * max(abs(A1_u0), 1e-12) + 1e-8


def test_pde_residual_decreases_with_order():
    field = preset("tanh_localvol").field
    T, t, x, h = 0.3, 0.0, 0.2, 1e-3

    def residual(N):
        p = plan(field, N)
        u = lambda tt, xx: solve(p, BUMP, tt, [xx], T).value
        c = u(t, x)
        ut = (u(t + h, x) - u(t - h, x)) / (2 * h)
        ux = (u(t, x + h) - u(t, x - h)) / (2 * h)
        uxx = (u(t, x + h) - 2 * c + u(t, x - h)) / h**2
        a2 = field.value((2,), t, np.array([x]))
        a1 = field.value((1,), t, np.array([x]))
        return abs(ut + a2 * uxx + a1 * ux)

    r = [residual(N) for N in range(4)]
    assert all(b < a for a, b in zip(r, r[1:]))


def test_time_dependent_coefficients_use_quadrature():
    t_ = sp.Symbol("t")
    f = CoefficientField.from_sympy(1, {(2,): 0.02 * (1 + 0.5 * t_) * (1 + 0.2 * sp.tanh(x0))}, [x0], t_)
    with pytest.raises(ModelError):
        plan(f, 1, time_integration="exact")
    p = plan(f, 2)
    assert not p.exact
    val = solve(p, BUMP, 0.0, [0.1], 0.5).value
    ref, err = fd_price(f, BUMP, 0.0, [0.1], 0.5)
    assert err < 1e-8
    assert val == pytest.approx(ref, abs=2e-5)


def test_two_dimensional_price_against_fd():
    f = two_dim_field()
    bump = GaussianBump((0.1, 0.1), 0.3)
    ref, err = fd_price(f, bump, 0.0, [0.0, 0.1], 0.25, cells=60, levels=3)
    errs = [abs(solve(plan(f, N), bump, 0.0, [0.0, 0.1], 0.25).value - ref) for N in range(3)]
    assert errs[2] < errs[0]
    assert errs[2] < 1e-4


# -- bootstrap -----------------------------------------------------------------


def test_bootstrap_single_step_is_solve():
    p = plan(preset("tanh_localvol").field, 1)
    xg = np.array([[0.0], [0.25]])
    got = bootstrap_solve(p, BUMP, 0.0, xg, 1.0, 1)
    want = [solve(p, BUMP, 0.0, x, 1.0).value for x in xg]
    assert np.allclose(got, want, rtol=1e-13)


@pytest.mark.parametrize("m", [1, 2, 4])
def test_bootstrap_exact_on_constant_coefficients(m):
    pr = preset("black_scholes")
    p = plan(pr.field, 1)
    exact = exact_constant_solution(pr.field.leading(0.0, [0.0]), BUMP, 0.0, [0.0], 1.0)
    got = bootstrap_solve(p, BUMP, 0.0, np.array([[0.0]]), 1.0, m)[0]
    assert got == pytest.approx(exact, abs=1e-7)


def test_bootstrap_improves_long_horizon():
    p = plan(preset("tanh_localvol").field, 1)
    ref, _ = fd_price(p.field, BUMP, 0.0, [0.25], 1.0)
    e1 = abs(bootstrap_solve(p, BUMP, 0.0, np.array([[0.25]]), 1.0, 1)[0] - ref)
    e8 = abs(bootstrap_solve(p, BUMP, 0.0, np.array([[0.25]]), 1.0, 8)[0] - ref)
    assert e8 < e1 / 4


def test_bootstrap_rejects_bad_steps():
    p = plan(preset("tanh_localvol").field, 1)
    with pytest.raises(ValueError):
        bootstrap_solve(p, BUMP, 0.0, np.array([[0.0]]), 1.0, 0)


def test_invalid_times():
    p = plan(preset("tanh_localvol").field, 1)
    with pytest.raises(ValueError):
        solve(p, BUMP, 1.0, [0.0], 0.5)
