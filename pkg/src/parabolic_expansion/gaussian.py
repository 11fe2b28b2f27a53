"""The leading-order Gaussian kernel, polynomial-times-Gaussian functions and quadrature.

The kernel is the transition density of a Gaussian with mean ``x + m`` and
covariance ``C`` over ``[t, T]``.  Every x-derivative of it is a polynomial in
the centred variable ``w = y - x - m`` times the kernel itself, which is what
makes the higher-order corrections closed-form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from numbers import Number
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial import Polynomial as TimePolynomial
from scipy.special import roots_hermitenorm
from numpy.polynomial.legendre import leggauss

from .algebra import MultiIndex, Polynomial, WeylOperator, multi_indices_upto
from .errors import ModelError

SPD_TOLERANCE = 1e-12


def rates_from_coefficients(a: Mapping[tuple, float], dim: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Split ``sum a_alpha D^alpha`` into covariance rate, drift and killing.

    Second-order entries follow ``C_ii = 2 a_{2e_i}`` and ``C_ij = a_{e_i + e_j}``.
    """
    C = np.zeros((dim, dim))
    m = np.zeros(dim)
    gamma = float(a.get((0,) * dim, 0.0))
    for i in range(dim):
        m[i] = a.get(tuple(MultiIndex.unit(dim, i)), 0.0)
        C[i, i] = 2.0 * a.get(tuple(MultiIndex.unit(dim, i, 2)), 0.0)
        for j in range(i + 1, dim):
            key = tuple(MultiIndex.unit(dim, i) + MultiIndex.unit(dim, j))
            C[i, j] = C[j, i] = a.get(key, 0.0)
    return C, m, gamma


def _cholesky(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, rtol=0.0, atol=SPD_TOLERANCE * max(1.0, np.abs(cov).max())):
        raise ModelError("covariance is not symmetric")
    if np.linalg.eigvalsh(cov).min() <= SPD_TOLERANCE * max(1.0, np.abs(cov).max()):
        raise ModelError("covariance is not positive definite")
    return np.linalg.cholesky(cov)


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    """Leading-order kernel over ``[t, T]``.

    ``density`` excludes the killing factor ``exp(log_killing)``; callers that
    need the full fundamental solution multiply by :attr:`discount`.
    """

    t: float
    T: float
    mean_offset: np.ndarray
    covariance: np.ndarray
    log_killing: float = 0.0
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean_offset, dtype=float))
        C = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if C.shape != (m.size, m.size):
            raise ValueError(f"covariance shape {C.shape} does not match mean of size {m.size}")
        if not self.T > self.t:
            raise ValueError("require t < T")
        object.__setattr__(self, "mean_offset", m)
        object.__setattr__(self, "covariance", C)
        L = _cholesky(C)
        object.__setattr__(self, "chol", L)
        object.__setattr__(self, "precision", np.linalg.inv(C))
        object.__setattr__(self, "_lognorm", -0.5 * (m.size * math.log(2 * math.pi)) - np.log(np.diag(L)).sum())

    @property
    def dim(self) -> int:
        return self.mean_offset.size

    @property
    def discount(self) -> float:
        return math.exp(self.log_killing)

    def mean(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) + self.mean_offset

    def density(self, x, y) -> np.ndarray | float:
        """``Gamma_0(t, x; T, y)``; broadcasts over leading axes of ``x`` and ``y``."""
        w = np.asarray(y, dtype=float) - np.asarray(x, dtype=float) - self.mean_offset
        z = np.linalg.solve(self.chol, w[..., None])[..., 0] if w.ndim > 1 else np.linalg.solve(self.chol, w)
        out = np.exp(self._lognorm - 0.5 * np.sum(z * z, axis=-1))
        return out if np.ndim(out) else float(out)

    def derivative_poly(self, alpha) -> Polynomial:
        """Polynomial ``P`` in ``w = y - x - m`` with ``D_x^alpha Gamma_0 = P(w) Gamma_0``."""
        alpha = tuple(int(a) for a in alpha)
        cache = self._cache
        if alpha in cache:
            return cache[alpha]
        d = self.dim
        if not any(alpha):
            p = Polynomial.constant(d, 1.0)
        else:
            i = next(k for k, a in enumerate(alpha) if a)
            lower = list(alpha)
            lower[i] -= 1
            prev = self.derivative_poly(lower)
            # d/dx_i [P(w) G] = (-dP/dw_i + P (C^{-1} w)_i) G
            row = Polynomial(d, {tuple(MultiIndex.unit(d, j)): float(self.precision[i, j]) for j in range(d)})
            p = prev * row - prev.derivative(i)
        cache[alpha] = p
        return p


def kernel_from_a0(a0: Mapping[tuple, object], t: float, T: float, quadrature_order: int = 8) -> GaussianKernel:
    """Integrate the zeroth-order coefficients over ``[t, T]``.

    Values may be numbers (constant in time), :class:`numpy.polynomial.Polynomial`
    in ``s`` (integrated exactly) or callables ``f(s)`` (Gauss-Legendre).
    """
    if not T > t:
        raise ValueError("require t < T")
    if not a0:
        raise ValueError("empty coefficient map")
    dim = len(next(iter(a0)))
    nodes, weights = leggauss(quadrature_order)
    half = 0.5 * (T - t)
    s_nodes = t + half * (nodes + 1.0)

    def integral(v) -> float:
        if isinstance(v, Number):
            return float(v) * (T - t)
        if isinstance(v, TimePolynomial):
            P = v.integ()
            return float(P(T) - P(t))
        if callable(v):
            return float(half * np.dot(weights, [float(v(s)) for s in s_nodes]))
        raise TypeError(f"unsupported coefficient {v!r}")

    integrated = {k: integral(v) for k, v in a0.items()}
    C, m, gamma = rates_from_coefficients(integrated, dim)
    return GaussianKernel(t, T, m, C, gamma)


def density(k: GaussianKernel, x, y):
    return k.density(x, y)


# ---------------------------------------------------------------------------
# polynomial x Gaussian
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolyGaussian:
    """``poly(y - x - m) * Gamma_0(t, x; T, y)`` for a frozen point ``x``.

    The polynomial is held in the centred variable ``w = y - x - m``; use
    :meth:`in_y` for the same polynomial expressed in ``y``.  ``d_x`` treats
    the polynomial coefficients as independent of ``x``.
    """

    poly: Polynomial
    kernel: GaussianKernel
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))

    @property
    def center(self) -> np.ndarray:
        return self.x + self.kernel.mean_offset

    def evaluate(self, y):
        y = np.asarray(y, dtype=float)
        return self.poly(y - self.center) * self.kernel.density(self.x, y)

    __call__ = evaluate

    def in_y(self) -> Polynomial:
        return self.poly.substitute_affine(self.center)

    def _same(self, other: "PolyGaussian") -> None:
        if other.kernel is not self.kernel or not np.array_equal(other.x, self.x):
            raise ValueError("PolyGaussians must share kernel and evaluation point")

    def __add__(self, other: "PolyGaussian") -> "PolyGaussian":
        self._same(other)
        return PolyGaussian(self.poly + other.poly, self.kernel, self.x)

    def scale(self, c: float) -> "PolyGaussian":
        return PolyGaussian(self.poly.scale(c), self.kernel, self.x)

    def d_y(self, axis: int) -> "PolyGaussian":
        row = _precision_row(self.kernel, axis)
        return PolyGaussian(self.poly.derivative(axis) - self.poly * row, self.kernel, self.x)

    def d_x(self, axis: int) -> "PolyGaussian":
        row = _precision_row(self.kernel, axis)
        return PolyGaussian(self.poly * row - self.poly.derivative(axis), self.kernel, self.x)

    def mul_y(self, q: Polynomial) -> "PolyGaussian":
        """Multiply by a polynomial given in the variable ``y``."""
        return PolyGaussian(self.poly * q.substitute_affine(-self.center), self.kernel, self.x)


def _precision_row(k: GaussianKernel, i: int) -> Polynomial:
    d = k.dim
    return Polynomial(d, {tuple(MultiIndex.unit(d, j)): float(k.precision[i, j]) for j in range(d)})


def apply_weyl_to_kernel(op: WeylOperator, k: GaussianKernel, x, *, origin=None, variable: str = "x") -> PolyGaussian:
    """Apply a numeric operator to ``Gamma_0(t, x; T, y)``.

    With ``variable="x"`` the operator acts on the forward variable and its
    multiplications are by ``x - origin``; with ``variable="y"`` it acts on the
    backward variable (``D_y = -D_x`` on the kernel) and multiplies by
    ``y - origin``.
    """
    if not op.is_numeric():
        raise ValueError("operator still carries symbolic time variables; integrate them first")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = k.dim
    if op.dim != d or x.size != d:
        raise ValueError("dimension mismatch between operator, kernel and point")
    origin = np.zeros(d) if origin is None else np.atleast_1d(np.asarray(origin, dtype=float))
    out: dict = {}
    if variable == "x":
        z = x - origin
        for (beta, alpha, _), c in op.terms.items():
            mult = c * math.prod(float(z[i]) ** e for i, e in enumerate(beta) if e)
            if mult == 0.0:
                continue
            for key, v in k.derivative_poly(alpha).terms.items():
                out[key] = out.get(key, 0.0) + mult * v
        poly = Polynomial._raw(d, out)
    elif variable == "y":
        shift = -(x + k.mean_offset - origin)  # y - origin = w - shift
        poly = Polynomial.zero(d)
        for (beta, alpha, _), c in op.terms.items():
            sign = -1.0 if sum(alpha) % 2 else 1.0
            term = k.derivative_poly(alpha).scale(sign * c)
            if any(beta):
                term = term * Polynomial.monomial(d, beta).substitute_affine(shift)
            poly = poly + term
    else:
        raise ValueError(f"variable must be 'x' or 'y', got {variable!r}")
    return PolyGaussian(poly, k, x)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussHermite:
    """Tensor Gauss-Hermite rule mapped through the Cholesky factor of the covariance."""

    order: int = 20


@dataclass(frozen=True)
class Trapezoid:
    """Uniform tensor grid in standardised coordinates on ``[-half_width, half_width]``."""

    points: int = 2001
    half_width: float = 12.0


@dataclass(frozen=True)
class Piecewise:
    """Gauss-Legendre panels split at the payoff's kinks along the first axis.

    Remaining axes (if any) use Gauss-Hermite of ``cross_order`` nodes.
    """

    order: int = 16
    panel_width: float = 1.0
    half_width: float = 12.0
    cross_order: int = 40


@lru_cache(maxsize=64)
def standard_normal_rule(order: int, dim: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``(order**dim, dim)`` and weights for expectations under ``N(0, I)``."""
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    z, w = roots_hermitenorm(order)
    w = w / math.sqrt(2.0 * math.pi)
    if dim == 1:
        nodes, weights = z[:, None], w
    else:
        grids = np.meshgrid(*([z] * dim), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        weights = np.ones(nodes.shape[0])
        for wg in np.meshgrid(*([w] * dim), indexing="ij"):
            weights = weights * wg.ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _piecewise_axis(kinks_std, rule: Piecewise) -> tuple[np.ndarray, np.ndarray]:
    R = rule.half_width
    breaks = sorted({-R, R, *(float(k) for k in kinks_std if -R < k < R)})
    g, gw = leggauss(rule.order)
    zs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        panels = max(1, math.ceil((b - a) / rule.panel_width))
        edges = np.linspace(a, b, panels + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            zs.append(lo + half * (g + 1.0))
            ws.append(half * gw)
    z = np.concatenate(zs)
    w = np.concatenate(ws) * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return z, w


def _standard_rule(k: GaussianKernel, x: np.ndarray, payoff, quadrature) -> tuple[np.ndarray, np.ndarray]:
    d = k.dim
    if isinstance(quadrature, GaussHermite):
        return standard_normal_rule(quadrature.order, d)
    if isinstance(quadrature, Trapezoid):
        if quadrature.points < 2:
            raise ValueError("trapezoid grid needs at least two points")
        z = np.linspace(-quadrature.half_width, quadrature.half_width, quadrature.points)
        w = np.full(z.size, z[1] - z[0])
        w[[0, -1]] *= 0.5
        w = w * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        grids = np.meshgrid(*([z] * d), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        weights = np.ones(nodes.shape[0])
        for wg in np.meshgrid(*([w] * d), indexing="ij"):
            weights = weights * wg.ravel()
        return nodes, weights
    if isinstance(quadrature, Piecewise):
        if quadrature.order < 1:
            raise ValueError("quadrature order must be >= 1")
        kinks = getattr(payoff, "kinks", ()) or ()
        L00 = k.chol[0, 0]
        mean0 = x[0] + k.mean_offset[0]
        z0, w0 = _piecewise_axis([(kk - mean0) / L00 for kk in kinks], quadrature)
        if d == 1:
            return z0[:, None], w0
        zr, wr = standard_normal_rule(quadrature.cross_order, d - 1)
        nodes = np.concatenate([np.repeat(z0, zr.shape[0])[:, None], np.tile(zr, (z0.size, 1))], axis=1)
        weights = np.repeat(w0, zr.shape[0]) * np.tile(wr, z0.size)
        return nodes, weights
    raise TypeError(f"unknown quadrature rule {quadrature!r}")


def integrate_against(pg: PolyGaussian, payoff: Callable, quadrature=None) -> float:
    """``∫ pg(y) payoff(y) dy``.

    ``payoff`` maps an ``(n, d)`` array of points to ``n`` values.  The default
    rule is :class:`Piecewise` when the payoff declares ``kinks`` and
    Gauss-Hermite of order 20 otherwise.
    """
    if quadrature is None:
        quadrature = Piecewise() if getattr(payoff, "kinks", None) else GaussHermite(20)
    k = pg.kernel
    Z, W = _standard_rule(k, pg.x, payoff, quadrature)
    w = Z @ k.chol.T
    y = pg.center + w
    vals = np.asarray(payoff(y), dtype=float).reshape(-1)
    return float(np.dot(W, pg.poly(w) * vals))


# ---------------------------------------------------------------------------
# Hermite polynomials
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _hermite_1d(n: int) -> tuple[float, ...]:
    # probabilists' He_n by recurrence, then normalised by sqrt(n!)
    prev, cur = [1.0], [0.0, 1.0]
    if n == 0:
        return (1.0,)
    for j in range(1, n):
        nxt = [0.0] + cur
        for i, c in enumerate(prev):
            nxt[i] -= j * c
        prev, cur = cur, nxt
    norm = math.sqrt(math.factorial(n))
    return tuple(c / norm for c in cur)


def hermite_polynomial(beta) -> Polynomial:
    """Orthonormal multivariate Hermite polynomial ``prod_i He_{beta_i}(z_i) / sqrt(beta_i!)``."""
    beta = tuple(beta)
    d = len(beta)
    p = Polynomial.constant(d, 1.0)
    for i, n in enumerate(beta):
        coeffs = _hermite_1d(n)
        p = p * Polynomial(d, {tuple(MultiIndex.unit(d, i, j)): c for j, c in enumerate(coeffs)})
    return p


def hermite_inner_products(
    f: Callable,
    center,
    weight_covariance=None,
    max_order: int = 2,
    quadrature_order: int = 60,
) -> dict[MultiIndex, float]:
    """Coefficients ``<H_beta(L^{-1}(. - center)), f>`` under ``N(center, Sigma)``.

    ``Sigma`` defaults to the identity; ``L`` is its Cholesky factor so the
    basis is orthonormal for any SPD weight covariance.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = center.size
    Sigma = np.eye(d) if weight_covariance is None else np.atleast_2d(np.asarray(weight_covariance, dtype=float))
    L = _cholesky(Sigma)
    Z, W = standard_normal_rule(quadrature_order, d)
    vals = np.asarray(f(center + Z @ L.T), dtype=float).reshape(-1)
    return {beta: float(np.dot(W, hermite_polynomial(beta)(Z) * vals)) for beta in multi_indices_upto(d, max_order)}
