"""Closed-form expansion of solutions and fundamental solutions.

For a generator split as ``A = A_0 + sum_n A_n`` (``A_0`` with constant
coefficients in space), the n-th correction is ``u_n = L_n u_0`` where

    L_n(t, T) = sum_h int_{t < s_1 < ... < s_h < T} sum_{i in I(n, h)} G_{i_1}(t, s_1) ... G_{i_h}(t, s_h)

and ``G_n(t, s)`` substitutes ``M(t, s) = x + m(t, s) + C(t, s) grad`` into
the polynomials ``a_{alpha,n}(s, .)``.  Everything is computed in shifted
coordinates ``z = x - center``; under the diagonal policy ``center = x`` so
only the pure-derivative part of ``L_n`` survives at evaluation time.

Two time-integration modes exist.  ``exact`` (time-homogeneous models) keeps
``(s_j - t)`` symbolic and integrates monomials over the simplex in closed
form.  ``quadrature`` evaluates ``G`` at numeric times and integrates the
recursion ``K_n(r) = sum_j int_r^T G_j(t, s) K_{n-j}(s) ds`` with nested
Gauss-Legendre rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.special import ndtr

from .algebra import MultiIndex, Polynomial, WeylOperator, compositions, simplex_integrate, weyl_compose
from .basis import CoefficientField, ExpansionScheme, centered_expansion, mean_path
from .errors import ModelError, NumericalError
from .gaussian import (
    GaussHermite,
    GaussianKernel,
    PolyGaussian,
    apply_weyl_to_kernel,
    integrate_against,
    rates_from_coefficients,
    standard_normal_rule,
)

TIME_MODES = ("auto", "exact", "quadrature")


@dataclass(eq=False)
class ExpansionPlan:
    """Everything needed to evaluate the N-th order approximation.

    ``frozen`` is ``"diagonal"`` (expansion point equals the evaluation point)
    or a fixed point.  Symbolic operators are cached per expansion point, so a
    plan can be reused across horizons and grids.
    """

    field: CoefficientField
    scheme: ExpansionScheme
    frozen: object = "diagonal"
    time_integration: str = "auto"
    quadrature_order: int = 8
    prune: float = 1e-14
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.time_integration not in TIME_MODES:
            raise ValueError(f"time_integration must be one of {TIME_MODES}")
        if self.quadrature_order < 1:
            raise ValueError("quadrature order must be >= 1")
        d = self.field.dim
        if not (isinstance(self.frozen, str) and self.frozen == "diagonal"):
            fixed = np.atleast_1d(np.asarray(self.frozen, dtype=float))
            if fixed.size != d:
                raise ValueError(f"fixed expansion point must have {d} components")
            self.frozen = fixed
        homogeneous = self.field.time_homogeneous and self.scheme.kind != "time_taylor"
        if self.time_integration == "exact" and not homogeneous:
            raise ModelError("exact time integration needs time-homogeneous coefficients; use quadrature")
        self.exact = homogeneous if self.time_integration == "auto" else self.time_integration == "exact"
        fo = self.field.derivative_order
        if fo is not None and fo < self.scheme.derivative_order:
            raise ModelError(
                f"{self.field.name} supplies derivatives to order {fo}, scheme needs {self.scheme.derivative_order}"
            )

    @property
    def order(self) -> int:
        return self.scheme.order

    @property
    def dim(self) -> int:
        return self.field.dim

    def center_for(self, x) -> np.ndarray:
        if isinstance(self.frozen, str):
            return np.atleast_1d(np.asarray(x, dtype=float)).copy()
        return self.frozen

    def frame(self, center, t: float) -> "_Frame":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        key = (tuple(center.tolist()),) if self.exact else (tuple(center.tolist()), float(t))
        fr = self._cache.get(key)
        if fr is None:
            fr = self._cache[key] = _Frame(self, center, t)
        return fr

    def clear_cache(self) -> None:
        self._cache.clear()


# ---------------------------------------------------------------------------
# operator construction
# ---------------------------------------------------------------------------


def _m_operators(dim: int, m, C, powers: tuple = (), sign: float = 1.0) -> list[WeylOperator]:
    """Components of ``z + sign * m * u + C * u * grad`` with ``u`` the time monomial ``powers``."""
    z = (0,) * dim
    ops = []
    for i in range(dim):
        e_i = tuple(MultiIndex.unit(dim, i))
        terms = {(e_i, z, ()): 1.0, (z, z, powers): sign * float(m[i])}
        for j in range(dim):
            terms[(z, tuple(MultiIndex.unit(dim, j)), powers)] = float(C[i, j])
        ops.append(WeylOperator(dim, terms))
    return ops


class _Substituter:
    """Evaluates polynomials at a commuting operator vector, caching monomials."""

    def __init__(self, ops: list[WeylOperator]):
        self.ops = ops
        self.dim = len(ops)
        self._pow = {(0,) * self.dim: WeylOperator.identity(self.dim, 1.0)}

    def monomial(self, beta: tuple) -> WeylOperator:
        got = self._pow.get(beta)
        if got is None:
            i = max(k for k, e in enumerate(beta) if e)
            lower = list(beta)
            lower[i] -= 1
            got = self._pow[beta] = weyl_compose(self.monomial(tuple(lower)), self.ops[i])
        return got

    def __call__(self, p: Polynomial) -> WeylOperator:
        out = WeylOperator.zero(self.dim)
        for beta, c in p.terms.items():
            out = out + self.monomial(beta).scale(c)
        return out


def _assemble_G(terms: dict, sub: _Substituter, dim: int) -> WeylOperator:
    out = WeylOperator.zero(dim)
    for alpha, p in terms.items():
        if p.is_zero():
            continue
        out = out + sub(p).then_derivative(alpha)
    return out


def _assemble_Gbar(terms: dict, sub: _Substituter, dim: int) -> WeylOperator:
    out = WeylOperator.zero(dim)
    for alpha, p in terms.items():
        if p.is_zero():
            continue
        sign = -1.0 if sum(alpha) % 2 else 1.0
        out = out + weyl_compose(WeylOperator.derivative(alpha, sign), sub(p))
    return out


class _Frame:
    """Per expansion point (and base time, in quadrature mode) state."""

    def __init__(self, plan: ExpansionPlan, center: np.ndarray, t: float):
        self.plan = plan
        self.center = center
        self.t = float(t)
        self.dim = plan.dim
        self._expansions: dict = {}
        self._G: dict = {}
        self._R: dict = {}
        self._K: dict = {}
        self._path = None
        if plan.scheme.kind == "time_taylor":
            self._path = plan.scheme.path if plan.scheme.path is not None else mean_path(plan.field, center, t)
        self._gl = leggauss(plan.quadrature_order)

    # -- coefficients ---------------------------------------------------------

    def expansion(self, s: float) -> list[dict]:
        key = 0.0 if self.plan.exact else float(s)
        got = self._expansions.get(key)
        if got is None:
            pc = None if self._path is None else self._path(s)
            got = self._expansions[key] = centered_expansion(self.plan.field, self.plan.scheme, s, self.center, pc)
        return got

    def rates(self, s: float) -> tuple[np.ndarray, np.ndarray, float]:
        lead = {a: p.coefficient((0,) * self.dim) for a, p in self.expansion(s)[0].items()}
        return rates_from_coefficients(lead, self.dim)

    def integrated(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray, float]:
        """``(int_a^b C, int_a^b m, int_a^b gamma)`` of the leading coefficients."""
        if self.plan.exact:
            C, m, g = self.rates(self.t)
            v = b - a
            return v * C, v * m, v * g
        nodes, weights = self._gl
        half = 0.5 * (b - a)
        C = np.zeros((self.dim, self.dim))
        m = np.zeros(self.dim)
        g = 0.0
        for u, w in zip(nodes, weights):
            Cs, ms, gs = self.rates(a + half * (u + 1.0))
            C += w * Cs
            m += w * ms
            g += w * gs
        return half * C, half * m, half * g

    def kernel(self, t: float, T: float) -> GaussianKernel:
        C, m, g = self.integrated(t, T)
        return GaussianKernel(t, T, m, C, g)

    # -- G operators ----------------------------------------------------------

    def symbolic_G(self, n: int) -> WeylOperator:
        """``G_n`` with the single time variable ``s_1`` (exact mode)."""
        key = ("sym", n)
        got = self._G.get(key)
        if got is None:
            C, m, _ = self.rates(self.t)
            sub = self._G.get("sym_sub")
            if sub is None:
                sub = self._G["sym_sub"] = _Substituter(_m_operators(self.dim, m, C, (1,)))
            exps = self.expansion(self.t)
            got = self._G[key] = _assemble_G(exps[n], sub, self.dim) if n < len(exps) else WeylOperator.zero(self.dim)
        return got

    def numeric_G(self, n: int, t: float, s: float) -> WeylOperator:
        key = ("num", n, float(t), float(s))
        got = self._G.get(key)
        if got is None:
            if s == t:
                C, m = np.zeros((self.dim, self.dim)), np.zeros(self.dim)
            else:
                C, m, _ = self.integrated(t, s)
            exps = self.expansion(s)
            sub = _Substituter(_m_operators(self.dim, m, C))
            got = self._G[key] = _assemble_G(exps[n], sub, self.dim) if n < len(exps) else WeylOperator.zero(self.dim)
        return got

    def numeric_Gbar(self, n: int, s: float, T: float) -> WeylOperator:
        C, m, _ = self.integrated(s, T)
        exps = self.expansion(s)
        sub = _Substituter(_m_operators(self.dim, m, C, sign=-1.0))
        return _assemble_Gbar(exps[n], sub, self.dim) if n < len(exps) else WeylOperator.zero(self.dim)

    # -- L operators ----------------------------------------------------------

    def _chain(self, n: int, j: int, h: int) -> WeylOperator:
        """Sum over compositions of ``n`` into parts at slots ``j..h`` of ``G_{i_j}(s_j) ... G_{i_h}(s_h)``."""
        key = (n, j, h)
        got = self._R.get(key)
        if got is not None:
            return got
        if j == h:
            got = self.symbolic_G(n).relabel_time({1: j})
        else:
            got = WeylOperator.zero(self.dim)
            for i in range(1, n - (h - j) + 1):
                left = self.symbolic_G(i)
                if left.is_zero():
                    continue
                right = self._chain(n - i, j + 1, h)
                if right.is_zero():
                    continue
                got = got + weyl_compose(left.relabel_time({1: j}), right)
        self._R[key] = got
        return got

    def symbolic_L(self, n: int) -> list[WeylOperator]:
        """Per-``h`` integrands of ``L_n`` (exact mode)."""
        return [self._chain(n, 1, h) for h in range(1, n + 1)]

    def L(self, n: int, t: float, T: float) -> WeylOperator:
        if n == 0:
            return WeylOperator.identity(self.dim, 1.0)
        if self.plan.exact:
            v = T - t
            out = WeylOperator.zero(self.dim)
            for h, integrand in enumerate(self.symbolic_L(n), start=1):
                if not integrand.is_zero():
                    out = out + simplex_integrate(integrand, h, 0.0, v)
        else:
            out = self._K_at(n, t, T)
        return out.pruned(self.plan.prune)

    def _K_at(self, n: int, r: float, T: float) -> WeylOperator:
        if n == 0:
            return WeylOperator.identity(self.dim, 1.0)
        key = (n, float(r), float(T))
        got = self._K.get(key)
        if got is not None:
            return got
        nodes, weights = self._gl
        half = 0.5 * (T - r)
        got = WeylOperator.zero(self.dim)
        for u, w in zip(nodes, weights):
            s = r + half * (u + 1.0)
            for j in range(1, n + 1):
                G = self.numeric_G(j, self.t, s)
                if G.is_zero():
                    continue
                rest = self._K_at(n - j, s, T)
                if rest.is_zero():
                    continue
                got = got + weyl_compose(G, rest).scale(half * w)
        self._K[key] = got
        return got


def _check_times(t: float, T: float) -> None:
    if not T > t:
        raise ValueError(f"require t < T, got t={t}, T={T}")


def build_G(plan: ExpansionPlan, n: int, t: float, s: float | None = None, *, center=None, slot: int = 1) -> WeylOperator:
    """``G_n(t, s)`` in coordinates shifted by ``center`` (default: the fixed point or the origin).

    With ``s=None`` (exact mode only) the result keeps ``(s_slot - t)`` symbolic.
    """
    if n < 1:
        raise ValueError("G_n is defined for n >= 1")
    fr = plan.frame(_default_center(plan, center), t)
    if s is None:
        if not plan.exact:
            raise ModelError("symbolic G needs exact time integration")
        return fr.symbolic_G(n).relabel_time({1: slot})
    if s < t:
        raise ValueError("require s >= t")
    return fr.numeric_G(n, t, s)


def build_Gbar(plan: ExpansionPlan, n: int, s: float, T: float, *, center=None) -> WeylOperator:
    """Adjoint-form operator acting on the backward variable (shifted by ``center``).

    On the leading kernel ``G_n(t, s) Gamma_0(t, x; T, y)`` equals this
    operator applied in ``y``.
    """
    if n < 0:
        raise ValueError("order must be >= 0")
    _check_times(s, T)
    return plan.frame(_default_center(plan, center), s).numeric_Gbar(n, s, T)


def build_L(plan: ExpansionPlan, n: int, t: float, T: float, *, center=None) -> WeylOperator:
    """``L_n(t, T)`` with numeric coefficients, in coordinates shifted by ``center``."""
    _check_times(t, T)
    if n < 0:
        raise ValueError("order must be >= 0")
    return plan.frame(_default_center(plan, center), t).L(n, t, T)


def _default_center(plan: ExpansionPlan, center) -> np.ndarray:
    if center is not None:
        return np.atleast_1d(np.asarray(center, dtype=float))
    if isinstance(plan.frozen, str):
        return np.zeros(plan.dim)
    return plan.frozen


# ---------------------------------------------------------------------------
# kernels and prices
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ApproximateSolution:
    """Per-order pieces ``L_n Gamma_0`` of the approximate fundamental solution at a fixed ``(t, x, T)``.

    ``terms[n]`` is a :class:`PolyGaussian`; the full approximation is
    ``discount * sum_n terms[n]``.
    """

    terms: tuple[PolyGaussian, ...]
    kernel: GaussianKernel
    x: np.ndarray
    center: np.ndarray
    order: int
    scheme: str

    @property
    def t(self) -> float:
        return self.kernel.t

    @property
    def T(self) -> float:
        return self.kernel.T

    @property
    def discount(self) -> float:
        return self.kernel.discount

    def density(self, y, upto: int | None = None):
        return self.combined(upto).evaluate(np.asarray(y, dtype=float))

    def combined(self, upto: int | None = None) -> PolyGaussian:
        """``discount * (1 + sum_{1 <= n <= upto} L_n) Gamma_0`` as one PolyGaussian."""
        terms = self.terms if upto is None else self.terms[: upto + 1]
        total = Polynomial.constant(self.kernel.dim, 1.0)
        for pg in terms[1:]:
            total = total + pg.poly
        return PolyGaussian(total.scale(self.discount), self.kernel, self.x)

    def price_terms(self, payoff: Callable, quadrature=None) -> list[float]:
        return [self.discount * integrate_against(pg, payoff, quadrature) for pg in self.terms]


def approximate_kernel(plan: ExpansionPlan, t: float, x, T: float) -> ApproximateSolution:
    _check_times(t, T)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != plan.dim:
        raise ValueError(f"point has dimension {x.size}, model has {plan.dim}")
    center = plan.center_for(x)
    fr = plan.frame(center, t)
    k = fr.kernel(t, T)
    terms = [PolyGaussian(Polynomial.constant(plan.dim, 1.0), k, x)]
    for n in range(1, plan.order + 1):
        terms.append(apply_weyl_to_kernel(fr.L(n, t, T), k, x, origin=center))
    return ApproximateSolution(tuple(terms), k, x, center, plan.order, plan.scheme.kind)


def fundamental_solution(plan: ExpansionPlan, t: float, x, T: float, y):
    """N-th order approximation of the fundamental solution at ``(t, x; T, y)`` (``y`` may be a batch)."""
    return approximate_kernel(plan, t, x, T).density(y)


@dataclass(frozen=True)
class SolveResult:
    value: float
    terms: tuple[float, ...]


def solve(plan: ExpansionPlan, payoff: Callable, t: float, x, T: float, quadrature=None) -> SolveResult:
    """``sum_{n <= N} u_n(t, x)`` for the terminal datum ``payoff``."""
    terms = approximate_kernel(plan, t, x, T).price_terms(payoff, quadrature)
    return SolveResult(float(math.fsum(terms)), tuple(terms))


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


class _Interpolant:
    """Cubic interpolation on a uniform grid with linear extrapolation (1-d)."""

    def __init__(self, grids: list[np.ndarray], values: np.ndarray):
        self.grids = grids
        if len(grids) == 1:
            g = grids[0]
            self._spline = CubicSpline(g, values)
            self._lo, self._hi = g[0], g[-1]
            self._d = self._spline.derivative()
        else:
            self._rgi = RegularGridInterpolator(grids, values, method="cubic", bounds_error=False, fill_value=None)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if len(self.grids) > 1:
            return self._rgi(y)
        v = y[..., 0]
        inside = np.clip(v, self._lo, self._hi)
        out = self._spline(inside)
        out = out + self._d(inside) * (v - inside)
        return out


def _grid_for(plan: ExpansionPlan, t: float, T: float, x_grid: np.ndarray, points: int, width_sd: float):
    lo, hi = [], []
    for i in range(plan.dim):
        pts = x_grid[:, i]
        # leading-order reach at the extreme start points
        k_lo = plan.frame(plan.center_for(x_grid[np.argmin(pts)]), t).kernel(t, T)
        k_hi = plan.frame(plan.center_for(x_grid[np.argmax(pts)]), t).kernel(t, T)
        sd = max(math.sqrt(k_lo.covariance[i, i]), math.sqrt(k_hi.covariance[i, i]))
        lo.append(pts.min() + min(0.0, k_lo.mean_offset[i]) - width_sd * sd)
        hi.append(pts.max() + max(0.0, k_hi.mean_offset[i]) + width_sd * sd)
    return [np.linspace(a, b, points) for a, b in zip(lo, hi)], np.array(lo), np.array(hi)


def bootstrap_solve(
    plan: ExpansionPlan,
    payoff: Callable,
    t: float,
    x_grid,
    T: float,
    m: int,
    *,
    grid_points: int = 241,
    width_sd: float = 8.0,
    quadrature=None,
    mass_tolerance: float = 1e-8,
) -> np.ndarray:
    """m-step composition of the approximate kernel over equal time steps.

    The value function is carried on an internal uniform grid covering
    ``width_sd`` leading-order standard deviations of the whole horizon and
    interpolated with cubic splines.  The first step integrates ``payoff``
    itself; the last step is evaluated directly at ``x_grid``.
    """
    _check_times(t, T)
    if m < 1:
        raise ValueError("need at least one step")
    d = plan.dim
    if d > 2:
        raise ValueError("bootstrap supports d <= 2")
    x_grid = np.asarray(x_grid, dtype=float)
    x_grid = x_grid.reshape(-1, d) if x_grid.ndim <= 1 or x_grid.shape[-1] != d else x_grid.reshape(-1, d)
    quad = quadrature if quadrature is not None else GaussHermite(24)
    grids, lo, hi = _grid_for(plan, t, T, x_grid, grid_points, width_sd)
    for xg in x_grid:
        k = plan.frame(plan.center_for(xg), t).kernel(t, T)
        sd = np.sqrt(np.diag(k.covariance))
        mean = xg + k.mean_offset
        outside = sum(ndtr((lo[i] - mean[i]) / sd[i]) + ndtr((mean[i] - hi[i]) / sd[i]) for i in range(d))
        if outside > mass_tolerance:
            raise NumericalError(f"bootstrap grid too narrow: {outside:.3g} of the mass lies beyond it")
    if d == 1:
        nodes = grids[0][:, None]
    else:
        mesh = np.meshgrid(*grids, indexing="ij")
        nodes = np.stack([g.ravel() for g in mesh], axis=-1)

    dt = (T - t) / m
    times = [t + k * dt for k in range(m + 1)]
    times[-1] = T
    weight_cache: dict = {}

    def step_weights(x0, a, b):
        key = (tuple(x0.tolist()), round(b - a, 14)) if plan.exact else (tuple(x0.tolist()), a, b)
        got = weight_cache.get(key)
        if got is None:
            sol = approximate_kernel(plan, a, x0, b)
            pg = sol.combined()
            Z, W = standard_normal_rule(quad.order, d) if isinstance(quad, GaussHermite) else (None, None)
            if Z is None:
                raise ValueError("bootstrap intermediate steps use Gauss-Hermite quadrature")
            w = Z @ pg.kernel.chol.T
            got = weight_cache[key] = (pg.center + w, W * pg.poly(w))
        return got

    def apply_step(points, a, b, fn):
        out = np.empty(points.shape[0])
        for i, x0 in enumerate(points):
            if fn is payoff:
                out[i] = integrate_against(approximate_kernel(plan, a, x0, b).combined(), payoff, quadrature)
            else:
                ys, ws = step_weights(x0, a, b)
                out[i] = float(np.dot(ws, fn(ys)))
        return out

    fn = payoff
    for i in range(m, 0, -1):
        a, b = times[i - 1], times[i]
        points = x_grid if i == 1 else nodes
        vals = apply_step(points, a, b, fn)
        if i == 1:
            return vals
        fn = _Interpolant(grids, vals if d == 1 else vals.reshape([g.size for g in grids]))
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# Duhamel cross-check for the first correction
# ---------------------------------------------------------------------------


def _gaussian_derivative_factors(alpha: tuple, P: np.ndarray, Pw: np.ndarray) -> np.ndarray:
    """``D_xi^alpha Gamma / Gamma`` for a Gaussian in ``y - xi - m`` with precision ``P`` (``|alpha| <= 2``)."""
    idx = [i for i, e in enumerate(alpha) for _ in range(e)]
    if not idx:
        return np.ones(Pw.shape[:-1])
    if len(idx) == 1:
        return Pw[..., idx[0]]
    i, j = idx
    return Pw[..., i] * Pw[..., j] - P[i, j]


def duhamel_u1(plan: ExpansionPlan, payoff: Callable, t: float, x, T: float, quadrature: int | tuple = 24) -> float:
    """First correction by direct space-time quadrature of Duhamel's formula.

    ``u_1(t, x) = int_t^T int Gamma_0(t, x; s, xi) A_1(s) u_0(s, xi) dxi ds`` with
    Gauss-Legendre in ``s`` and Gauss-Hermite in ``xi`` and ``y``.  Kept
    independent of the operator algebra so it can cross-check ``L_1``.
    ``quadrature`` is a single order or ``(time, space)`` orders.
    """
    _check_times(t, T)
    if plan.dim > 2:
        raise ValueError("Duhamel quadrature supports d <= 2")
    q_s, q_x = (quadrature, quadrature) if isinstance(quadrature, int) else quadrature
    d = plan.dim
    x = np.atleast_1d(np.asarray(x, dtype=float))
    center = plan.center_for(x)
    fr = plan.frame(center, t)
    s_nodes, s_weights = leggauss(q_s)
    z1, w1 = hermegauss(q_x)
    w1 = w1 / math.sqrt(2 * math.pi)
    if d == 1:
        Z, W = z1[:, None], w1
    else:
        g = np.meshgrid(z1, z1, indexing="ij")
        Z = np.stack([a.ravel() for a in g], axis=-1)
        W = np.outer(w1, w1).ravel()
    half = 0.5 * (T - t)
    total = 0.0
    _, _, g_all = fr.integrated(t, T)
    for u, ws in zip(s_nodes, s_weights):
        s = t + half * (u + 1.0)
        C1, m1, _ = fr.integrated(t, s)
        C2, m2, _ = fr.integrated(s, T)
        L1 = np.linalg.cholesky(C1)
        L2 = np.linalg.cholesky(C2)
        P2 = np.linalg.inv(C2)
        xi = x + m1 + Z @ L1.T                       # (q, d)
        wy = Z @ L2.T                                # (q, d) offsets y - xi - m2
        y = xi[:, None, :] + m2 + wy[None, :, :]     # (q, q, d)
        phi = np.asarray(payoff(y.reshape(-1, d)), dtype=float).reshape(y.shape[:2])
        Pw = wy @ P2.T                               # (q, d)
        A1 = np.zeros(xi.shape[0])
        terms = fr.expansion(s)[1] if len(fr.expansion(s)) > 1 else {}
        for alpha, poly in terms.items():
            if poly.is_zero():
                continue
            deriv = phi @ (W * _gaussian_derivative_factors(alpha, P2, Pw))
            A1 = A1 + poly(xi - center) * deriv
        total += half * ws * float(np.dot(W, A1))
    return math.exp(g_all) * total
