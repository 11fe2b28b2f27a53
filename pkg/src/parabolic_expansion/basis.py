"""Model coefficients and their polynomial expansions.

A :class:`CoefficientField` holds the coefficients ``a_alpha(t, x)`` of the
generator ``A = sum_{|alpha| <= 2} a_alpha D^alpha`` together with their
spatial derivatives.  The expansion functions turn it into the families of
polynomials ``a_{alpha,n}(t, .)`` (Taylor, grouped Taylor, Taylor around a
moving point, Hermite projection) whose sum over ``n`` approximates
``a_alpha``.

Callbacks take ``(t, x)`` with ``x`` of shape ``(..., d)`` and return an array
of shape ``(...)``.  They must be pure: the engine calls them from cached and
possibly concurrent code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .algebra import MultiIndex, Polynomial, multi_indices, multi_indices_upto
from .errors import ModelError
from .gaussian import hermite_inner_products, hermite_polynomial

Callback = Callable[[float, np.ndarray], np.ndarray]

SCHEME_KINDS = ("taylor", "enhanced_taylor", "time_taylor", "hermite")


def generator_indices(dim: int) -> list[MultiIndex]:
    """All ``alpha`` with ``|alpha| <= 2`` (the slots of a second-order generator)."""
    return multi_indices_upto(dim, 2)


def _central_weights(n: int) -> list[tuple[float, int]]:
    # n-th central difference: sum_j (-1)^j C(n, j) f(x + (n/2 - j) h)
    return [((n / 2.0 - j), (-1) ** j * math.comb(n, j)) for j in range(n + 1)]


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Coefficients ``a_alpha(t, x)`` for ``|alpha| <= 2`` and their derivatives.

    ``derivatives`` maps ``(alpha, beta)`` to a callback for ``D^beta a_alpha``.
    Missing derivatives up to ``derivative_order`` (``None``: unlimited) fall
    back to central finite differences.  ``ellipticity`` is the constant ``M``
    in ``M^{-1}|xi|^2 <= sum a_ij xi_i xi_j <= M |xi|^2``; when given it is
    spot-checked on ``ellipticity_samples`` points of ``box`` at each time in
    ``times``.
    """

    dim: int
    coefficients: Mapping[tuple, Callback]
    derivatives: Mapping[tuple, Callback] = field(default_factory=dict)
    derivative_order: int | None = None
    time_homogeneous: bool = True
    name: str = "custom"
    ellipticity: float | None = None
    box: tuple[float, float] = (-1.0, 1.0)
    times: tuple[float, ...] = (0.0,)
    ellipticity_samples: int = 128
    fd_epsilon: float = float(np.finfo(float).eps)

    def __post_init__(self):
        coeffs = {tuple(int(e) for e in a): f for a, f in self.coefficients.items()}
        for a in coeffs:
            if len(a) != self.dim or sum(a) > 2:
                raise ModelError(f"coefficient index {a} is not a generator slot for dimension {self.dim}")
        object.__setattr__(self, "coefficients", coeffs)
        derivs = {(tuple(a), tuple(b)): f for (a, b), f in self.derivatives.items()}
        object.__setattr__(self, "derivatives", derivs)
        if self.ellipticity is not None:
            self.check_ellipticity()

    # -- evaluation -----------------------------------------------------------

    def value(self, alpha, t: float, x) -> np.ndarray:
        f = self.coefficients.get(tuple(alpha))
        x = np.asarray(x, dtype=float)
        if f is None:
            return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
        return f(t, x)

    def derivative(self, alpha, beta, t: float, x) -> float:
        """``D^beta a_alpha(t, x)`` at a single point."""
        alpha, beta = tuple(alpha), tuple(beta)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = sum(beta)
        if n == 0:
            return float(self.value(alpha, t, x))
        if alpha not in self.coefficients:
            return 0.0
        f = self.derivatives.get((alpha, beta))
        if f is not None:
            return float(f(t, x))
        if self.derivative_order is not None and n > self.derivative_order:
            raise ModelError(f"{self.name}: derivative of order {n} requested, field supplies {self.derivative_order}")
        return self._fd_derivative(alpha, beta, t, x)

    def _fd_derivative(self, alpha, beta, t, x) -> float:
        n = sum(beta)
        h = self.fd_epsilon ** (1.0 / (n + 2)) * max(1.0, float(np.max(np.abs(x))))
        stencils = [_central_weights(b) if b else [(0.0, 1)] for b in beta]
        grids = np.meshgrid(*[np.arange(len(s)) for s in stencils], indexing="ij")
        idx = np.stack([g.ravel() for g in grids], axis=-1)
        offsets = np.array([[stencils[i][j][0] for i, j in enumerate(row)] for row in idx])
        weights = np.array([math.prod(stencils[i][j][1] for i, j in enumerate(row)) for row in idx], dtype=float)
        vals = np.asarray(self.coefficients[alpha](t, x + h * offsets), dtype=float)
        vals = np.broadcast_to(vals, weights.shape)
        return float(np.dot(weights, vals) / h**n)

    def taylor_coefficients(self, alpha, t: float, center, order: int) -> dict[MultiIndex, float]:
        """``D^beta a_alpha(t, center) / beta!`` for ``|beta| == order``."""
        return {b: self.derivative(alpha, b, t, center) / b.factorial() for b in multi_indices(self.dim, order)}

    def leading(self, t: float, center) -> dict[tuple, float]:
        return {tuple(a): float(self.value(a, t, np.atleast_1d(np.asarray(center, dtype=float)))) for a in self.coefficients}

    def diffusion_matrix(self, t: float, x) -> np.ndarray:
        """Symmetric ``(..., d, d)`` array with ``sum a_ij xi_i xi_j`` equal to the principal symbol."""
        x = np.asarray(x, dtype=float)
        d = self.dim
        out = np.zeros(x.shape[:-1] + (d, d))
        for i in range(d):
            out[..., i, i] = self.value(MultiIndex.unit(d, i, 2), t, x)
            for j in range(i + 1, d):
                v = 0.5 * np.asarray(self.value(MultiIndex.unit(d, i) + MultiIndex.unit(d, j), t, x))
                out[..., i, j] = out[..., j, i] = v
        return out

    def check_ellipticity(self, seed: int = 0) -> None:
        M = self.ellipticity
        if M is None or M < 1.0:
            raise ModelError(f"{self.name}: ellipticity constant must be >= 1, got {M}")
        rng = np.random.default_rng(seed)
        lo, hi = self.box
        pts = rng.uniform(lo, hi, size=(self.ellipticity_samples, self.dim))
        for t in self.times:
            eig = np.linalg.eigvalsh(self.diffusion_matrix(t, pts))
            if eig.min() < 1.0 / M or eig.max() > M:
                raise ModelError(
                    f"{self.name}: principal symbol eigenvalues in [{eig.min():.3g}, {eig.max():.3g}] "
                    f"violate ellipticity bound M={M}"
                )

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_sympy(cls, dim: int, expressions: Mapping[tuple, object], symbols: Sequence, time_symbol=None,
                   max_order: int = 4, **kwargs) -> "CoefficientField":
        """Build a field with analytic derivatives from sympy expressions in ``symbols``."""
        import sympy as sp

        xs = list(symbols)
        if len(xs) != dim:
            raise ValueError("need one symbol per dimension")
        tsym = time_symbol if time_symbol is not None else sp.Symbol("t")
        homogeneous = True
        coeffs, derivs = {}, {}
        for a, expr in expressions.items():
            expr = sp.sympify(expr)
            if tsym in expr.free_symbols:
                homogeneous = False
            coeffs[tuple(a)] = _lambdify(tsym, xs, expr)
            for b in multi_indices_upto(dim, max_order):
                if sum(b) == 0:
                    continue
                dexpr = expr
                for i, e in enumerate(b):
                    if e:
                        dexpr = sp.diff(dexpr, xs[i], e)
                derivs[(tuple(a), tuple(b))] = _lambdify(tsym, xs, dexpr)
        kwargs.setdefault("time_homogeneous", homogeneous)
        return cls(dim, coeffs, derivs, derivative_order=max_order, **kwargs)


def _lambdify(tsym, xs, expr) -> Callback:
    import sympy as sp

    f = sp.lambdify([tsym, *xs], expr, "numpy")

    def cb(t, x):
        x = np.asarray(x, dtype=float)
        out = f(t, *np.moveaxis(x, -1, 0))
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy() if x.ndim > 1 else float(out)

    return cb


# ---------------------------------------------------------------------------
# expansion schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExpansionScheme:
    """Which polynomial expansion to use and its order ``N``.

    ``groups`` are the grouping bounds ``(M_1, ..., M_N)`` of the grouped
    Taylor scheme; ``path`` is the moving expansion point of ``time_taylor``
    (``None``: the order-0 mean path started at the evaluation point);
    ``weight_covariance`` is the covariance of the Gaussian weight of the
    Hermite scheme (``None``: identity).
    """

    kind: str = "taylor"
    order: int = 1
    groups: tuple[int, ...] | None = None
    path: Callable[[float], np.ndarray] | None = None
    weight_covariance: np.ndarray | None = None
    hermite_quadrature: int = 60

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}; expected one of {SCHEME_KINDS}")
        if self.order < 0:
            raise ValueError("expansion order must be >= 0")
        if self.kind == "enhanced_taylor":
            g = tuple(int(m) for m in (self.groups if self.groups is not None else range(1, self.order + 1)))
            if len(g) != self.order:
                raise ValueError(f"need {self.order} group bounds, got {len(g)}")
            if any(b < a for a, b in zip((0,) + g, g)):
                raise ValueError("group bounds must be non-decreasing and non-negative")
            object.__setattr__(self, "groups", g)

    @property
    def derivative_order(self) -> int:
        if self.kind == "enhanced_taylor":
            return self.groups[-1] if self.groups else 0
        if self.kind == "hermite":
            return 0
        return self.order

    def taylor_orders(self, n: int) -> range:
        """Taylor orders collected into the n-th term."""
        if self.kind == "enhanced_taylor":
            bounds = (0,) + self.groups
            return range(bounds[n - 1] + 1, bounds[n] + 1) if n else range(0, 1)
        return range(n, n + 1)


def _taylor_group(field: CoefficientField, alpha, t, center, orders) -> Polynomial:
    d = field.dim
    terms: dict = {}
    for k in orders:
        for b, c in field.taylor_coefficients(alpha, t, center, k).items():
            terms[tuple(b)] = c
    return Polynomial(d, terms)


def mean_path(field: CoefficientField, start, t0: float, quadrature_order: int = 8) -> Callable[[float], np.ndarray]:
    """``x(s) = start + int_{t0}^s m(r, start) dr``: one Picard pass for the order-0 mean."""
    start = np.atleast_1d(np.asarray(start, dtype=float))
    d = field.dim
    units = [tuple(MultiIndex.unit(d, i)) for i in range(d)]
    if field.time_homogeneous:
        drift = np.array([float(field.value(u, t0, start)) for u in units])
        return lambda s: start + (s - t0) * drift
    nodes, weights = leggauss(quadrature_order)

    def path(s):
        if s == t0:
            return start.copy()
        half = 0.5 * (s - t0)
        rs = t0 + half * (nodes + 1.0)
        drift = np.array([[float(field.value(u, r, start)) for u in units] for r in rs])
        return start + half * weights @ drift

    return path


def centered_expansion(field: CoefficientField, scheme: ExpansionScheme, t: float, center,
                       path_center=None) -> list[dict[tuple, Polynomial]]:
    """All terms ``a_{alpha,n}(t, .)`` for ``n = 0..N`` as polynomials in ``z = x - center``.

    For ``time_taylor`` the expansion point is ``path(t)`` (or ``path_center``
    when supplied) while the returned polynomials stay in ``z``.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    N = scheme.order
    out: list[dict] = [dict() for _ in range(N + 1)]
    alphas = list(field.coefficients)
    if scheme.kind in ("taylor", "enhanced_taylor"):
        for n in range(N + 1):
            for a in alphas:
                p = _taylor_group(field, a, t, center, scheme.taylor_orders(n))
                if not p.is_zero() or n == 0:
                    out[n][a] = p
    elif scheme.kind == "time_taylor":
        if path_center is None:
            path = scheme.path if scheme.path is not None else mean_path(field, center, t)
            path_center = path(t)
        xbar = np.atleast_1d(np.asarray(path_center, dtype=float))
        shift = (xbar - center).tolist()
        for n in range(N + 1):
            for a in alphas:
                p = _taylor_group(field, a, t, xbar, (n,)).substitute_affine(shift)
                if not p.is_zero() or n == 0:
                    out[n][a] = p
    else:
        d = field.dim
        Sigma = np.eye(d) if scheme.weight_covariance is None else np.atleast_2d(scheme.weight_covariance)
        Linv = np.linalg.inv(np.linalg.cholesky(Sigma))
        basis = {b: hermite_polynomial(b).compose_affine(Linv) for b in multi_indices_upto(d, N)}
        for a in alphas:
            coeffs = hermite_inner_products(
                lambda y, a=a: field.value(a, t, y), center, Sigma, N, scheme.hermite_quadrature
            )
            for n in range(N + 1):
                p = Polynomial.zero(d)
                for b, c in coeffs.items():
                    if sum(b) == n:
                        p = p + basis[b].scale(c)
                if not p.is_zero() or n == 0:
                    out[n][a] = p
    for a in alphas:
        out[0].setdefault(a, Polynomial.zero(field.dim))
        if out[0][a].degree() > 0:
            raise ModelError("leading expansion term must be constant in space")
    return out


def _absolute(terms: dict, center, field: CoefficientField | None = None) -> dict:
    """Shift centred polynomials back to ``x``; with ``field``, absent slots become zero polynomials."""
    shift = np.atleast_1d(np.asarray(center, dtype=float)).tolist()
    out = {a: p.substitute_affine(shift) for a, p in terms.items()}
    if field is not None:
        for a in field.coefficients:
            out.setdefault(a, Polynomial.zero(field.dim))
    return out


def _check_order(field: CoefficientField, needed: int) -> None:
    if field.derivative_order is not None and needed > field.derivative_order:
        raise ModelError(f"{field.name}: expansion needs derivatives of order {needed}, field supplies {field.derivative_order}")


def expand_taylor(field: CoefficientField, center, n: int, t: float) -> dict[tuple, Polynomial]:
    """n-th Taylor term of every coefficient around ``center``, as polynomials in ``x``."""
    _check_order(field, n)
    return _absolute(centered_expansion(field, ExpansionScheme("taylor", n), t, center)[n], center, field)


def expand_enhanced(field: CoefficientField, center, groups: Sequence[int], n: int, t: float) -> dict[tuple, Polynomial]:
    """n-th group of Taylor orders ``1 + M_{n-1} .. M_n``."""
    scheme = ExpansionScheme("enhanced_taylor", len(groups), tuple(groups))
    if n > scheme.order:
        raise ValueError(f"order {n} exceeds the {scheme.order} supplied group bounds")
    _check_order(field, scheme.derivative_order)
    terms = {}
    for a in field.coefficients:
        p = _taylor_group(field, a, t, np.atleast_1d(center), scheme.taylor_orders(n))
        terms[a] = p
    return _absolute(terms, center)


def expand_time_taylor(field: CoefficientField, path: Callable[[float], np.ndarray], n: int, t: float) -> dict[tuple, Polynomial]:
    """n-th Taylor term around the moving point ``path(t)``."""
    _check_order(field, n)
    xbar = np.atleast_1d(np.asarray(path(t), dtype=float))
    return _absolute({a: _taylor_group(field, a, t, xbar, (n,)) for a in field.coefficients}, xbar)


def expand_hermite(field: CoefficientField, center, weight_covariance, n: int, t: float,
                   quadrature_order: int = 60) -> dict[tuple, Polynomial]:
    """n-th Hermite projection under a Gaussian weight centred at ``center``."""
    scheme = ExpansionScheme("hermite", n, weight_covariance=weight_covariance, hermite_quadrature=quadrature_order)
    return _absolute(centered_expansion(field, scheme, t, center)[n], center, field)
