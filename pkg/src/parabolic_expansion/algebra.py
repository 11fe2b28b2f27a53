"""Exact symbolic kernel: multi-indices, polynomials and the Weyl algebra.

Operators are stored in normal form: every term ``c * x**beta * D**alpha`` means
"apply ``D**alpha`` first, then multiply by ``x**beta``".  Scalars are either
plain numbers (floats or :class:`fractions.Fraction`) or products of powers of
the time offsets ``(s_j - t)``, which are integrated away over ordered simplices
by :func:`simplex_integrate`.

All objects are immutable after construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from numbers import Number
from typing import Iterable, Iterator, Mapping

import numpy as np

#: Float coefficients below this magnitude are dropped from term maps.
UNDERFLOW = 1e-300

#: Degree reported for the zero polynomial / zero operator.
ZERO_DEGREE = -1


class MultiIndex(tuple):
    """Exponent vector ``(a_1, ..., a_d)`` of non-negative integers.

    ``+`` and ``-`` act component-wise (unlike plain tuples).
    """

    __slots__ = ()

    def __new__(cls, exponents: Iterable[int] = ()):
        exps = tuple(int(e) for e in exponents)
        if any(e < 0 for e in exps):
            raise ValueError(f"negative exponent in multi-index {exps}")
        return super().__new__(cls, exps)

    @classmethod
    def zero(cls, dim: int) -> "MultiIndex":
        return cls((0,) * dim)

    @classmethod
    def unit(cls, dim: int, axis: int, power: int = 1) -> "MultiIndex":
        e = [0] * dim
        e[axis] = power
        return cls(e)

    @property
    def dim(self) -> int:
        return len(self)

    def order(self) -> int:
        return sum(self)

    def factorial(self) -> int:
        return math.prod(math.factorial(e) for e in self)

    def __add__(self, other):
        _check_dims(len(self), len(other))
        return MultiIndex(a + b for a, b in zip(self, other))

    def __sub__(self, other):
        _check_dims(len(self), len(other))
        return MultiIndex(a - b for a, b in zip(self, other))

    def __repr__(self) -> str:
        return f"MultiIndex{tuple(self)}"


def multi_indices(dim: int, order: int) -> list[MultiIndex]:
    """All multi-indices of length ``dim`` with ``|alpha| == order``, lexicographically descending."""
    if order < 0:
        return []
    out = []
    for cuts in itertools.combinations(range(order + dim - 1), dim - 1):
        prev = -1
        parts = []
        for c in cuts:
            parts.append(c - prev - 1)
            prev = c
        parts.append(order + dim - 1 - prev - 1)
        out.append(MultiIndex(parts))
    return sorted(out, reverse=True)


def multi_indices_upto(dim: int, max_order: int) -> list[MultiIndex]:
    return [a for n in range(max_order + 1) for a in multi_indices(dim, n)]


def _check_dims(d1: int, d2: int) -> None:
    if d1 != d2:
        raise ValueError(f"dimension mismatch: {d1} != {d2}")


def _is_zero(c) -> bool:
    if isinstance(c, float):
        return abs(c) < UNDERFLOW
    return c == 0


def _clean(c):
    # numpy scalars are much slower than Python floats in the inner loops
    if isinstance(c, np.generic):
        return c.item()
    return c


def _tadd(a: tuple, b: tuple) -> tuple:
    return tuple(x + y for x, y in zip(a, b))


def _tsub(a: tuple, b: tuple) -> tuple:
    return tuple(x - y for x, y in zip(a, b))


def _as_list(v) -> list:
    if isinstance(v, np.ndarray):
        return v.tolist() if v.ndim else [v.item()]
    if isinstance(v, (list, tuple)):
        return [_clean(s) for s in v]
    return [_clean(v)]


def _normalize(terms: Mapping) -> dict:
    return {k: _clean(v) for k, v in terms.items() if not _is_zero(v)}


# ---------------------------------------------------------------------------
# Polynomials
# ---------------------------------------------------------------------------


class Polynomial:
    """Multivariate polynomial ``sum_beta c_beta x**beta`` in ``dim`` variables."""

    __slots__ = ("dim", "terms")

    def __init__(self, dim: int, terms: Mapping[tuple, Number] | None = None):
        self.dim = int(dim)
        clean = {}
        for k, v in (terms or {}).items():
            if len(k) != self.dim:
                raise ValueError(f"exponent {k} does not match dimension {dim}")
            key = tuple(int(e) for e in k)
            clean[key] = clean.get(key, 0) + v
        self.terms = _normalize(clean)

    @classmethod
    def _raw(cls, dim: int, terms: dict) -> "Polynomial":
        p = cls.__new__(cls)
        p.dim = dim
        p.terms = _normalize(terms)
        return p

    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls._raw(dim, {})

    @classmethod
    def constant(cls, dim: int, c: Number) -> "Polynomial":
        return cls._raw(dim, {(0,) * dim: c})

    @classmethod
    def monomial(cls, dim: int, beta: Iterable[int], c: Number = 1) -> "Polynomial":
        return cls(dim, {tuple(beta): c})

    @classmethod
    def variable(cls, dim: int, axis: int) -> "Polynomial":
        return cls._raw(dim, {tuple(MultiIndex.unit(dim, axis)): 1})

    def degree(self) -> int:
        if not self.terms:
            return ZERO_DEGREE
        return max(sum(k) for k in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, beta: Iterable[int]):
        return self.terms.get(tuple(beta), 0)

    def __iter__(self) -> Iterator[tuple[MultiIndex, Number]]:
        for k, v in sorted(self.terms.items(), reverse=True):
            yield MultiIndex(k), v

    def __len__(self) -> int:
        return len(self.terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, Number):
            other = Polynomial.constant(self.dim, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self.terms == other.terms

    __hash__ = None

    def __repr__(self) -> str:
        if not self.terms:
            return f"Polynomial(dim={self.dim}, 0)"
        body = " + ".join(f"{v!r}*x^{k}" for k, v in sorted(self.terms.items(), reverse=True))
        return f"Polynomial(dim={self.dim}, {body})"

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            _check_dims(self.dim, other.dim)
            return other
        if isinstance(other, (Number, np.generic)):
            return Polynomial.constant(self.dim, _clean(other))
        raise TypeError(f"cannot combine Polynomial with {type(other).__name__}")

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0) + v
        return Polynomial._raw(self.dim, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial._raw(self.dim, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._coerce(other) - self

    def scale(self, c: Number) -> "Polynomial":
        c = _clean(c)
        return Polynomial._raw(self.dim, {k: v * c for k, v in self.terms.items()})

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (Number, np.generic)):
            return self.scale(other)
        other = self._coerce(other)
        out: dict = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                k = _tadd(k1, k2)
                out[k] = out.get(k, 0) + v1 * v2
        return Polynomial._raw(self.dim, out)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Polynomial":
        if n < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(self.dim, 1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    # -- calculus and substitution -------------------------------------------

    def derivative(self, axis: int) -> "Polynomial":
        out = {}
        for k, v in self.terms.items():
            e = k[axis]
            if e:
                nk = list(k)
                nk[axis] = e - 1
                out[tuple(nk)] = v * e
        return Polynomial._raw(self.dim, out)

    def substitute_affine(self, shift) -> "Polynomial":
        """Return ``q(x) = p(x - shift)``."""
        shift = _as_list(shift)
        _check_dims(self.dim, len(shift))
        out: dict = {}
        for k, v in self.terms.items():
            # expand prod_i (x_i - s_i)^{k_i} axis by axis
            axis_terms = []
            for e, s in zip(k, shift):
                axis_terms.append([(j, math.comb(e, j) * (-s) ** (e - j)) for j in range(e + 1)])
            for combo in itertools.product(*axis_terms):
                key = tuple(j for j, _ in combo)
                c = v
                for _, w in combo:
                    c = c * w
                out[key] = out.get(key, 0) + c
        return Polynomial._raw(self.dim, out)

    def compose_affine(self, matrix, shift=None) -> "Polynomial":
        """Return ``q(x) = p(A x + b)`` for a ``dim x dim`` matrix ``A`` and vector ``b``."""
        A = np.asarray(matrix, dtype=float)
        b = np.zeros(self.dim) if shift is None else np.asarray(shift, dtype=float)
        forms = []
        for i in range(self.dim):
            lin = {tuple(MultiIndex.unit(self.dim, j)): float(A[i, j]) for j in range(self.dim)}
            lin[(0,) * self.dim] = float(b[i])
            forms.append(Polynomial(self.dim, lin))
        out = Polynomial.zero(self.dim)
        for k, v in self.terms.items():
            term = Polynomial.constant(self.dim, v)
            for i, e in enumerate(k):
                if e:
                    term = term * forms[i] ** e
            out = out + term
        return out

    def __call__(self, x):
        """Evaluate at a point of shape ``(dim,)`` or a batch of shape ``(..., dim)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"point has dimension {x.shape[-1]}, expected {self.dim}")
        out = np.zeros(x.shape[:-1])
        if not self.terms:
            return out if out.ndim else 0.0
        maxdeg = max(max(k) for k in self.terms)
        powers = [np.ones(x.shape)]
        for _ in range(maxdeg):
            powers.append(powers[-1] * x)
        for k, v in self.terms.items():
            mono = float(v)
            for i, e in enumerate(k):
                if e:
                    mono = mono * powers[e][..., i]
            out = out + mono
        return out if out.ndim else float(out)

    def max_abs_coefficient(self) -> float:
        return max((abs(float(v)) for v in self.terms.values()), default=0.0)


def poly_arith(p: Polynomial, q: Polynomial | None = None, op: str = "add", *, scalar=None, shift=None) -> Polynomial:
    """Dispatch form of the polynomial operations (``add``, ``mul``, ``scale``, ``substitute_affine``)."""
    if op == "add":
        return p + q
    if op == "mul":
        return p * q
    if op == "scale":
        return p.scale(scalar)
    if op == "substitute_affine":
        return p.substitute_affine(shift)
    raise ValueError(f"unknown polynomial operation {op!r}")


# ---------------------------------------------------------------------------
# Time-monomial scalars
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeMonomial:
    """``coefficient * prod_j (s_j - t)**powers[j-1]`` (time variables are 1-based)."""

    coefficient: Number = 1
    powers: tuple[int, ...] = field(default=())

    def __post_init__(self):
        p = tuple(int(e) for e in self.powers)
        if any(e < 0 for e in p):
            raise ValueError("negative time exponent")
        object.__setattr__(self, "powers", _strip(p))

    def __mul__(self, other: "TimeMonomial") -> "TimeMonomial":
        return TimeMonomial(self.coefficient * other.coefficient, _padd(self.powers, other.powers))

    def evaluate(self, offsets) -> float:
        """Value at numeric offsets ``(s_1 - t, s_2 - t, ...)``."""
        val = self.coefficient
        for e, u in zip(self.powers, offsets):
            val = val * u**e
        if len(self.powers) > len(offsets):
            raise ValueError("not enough time offsets supplied")
        return val


def _strip(p: tuple) -> tuple:
    n = len(p)
    while n and p[n - 1] == 0:
        n -= 1
    return p[:n]


def _padd(a: tuple, b: tuple) -> tuple:
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return a
    return tuple(x + y for x, y in zip(a, b + (0,) * (len(a) - len(b))))


# ---------------------------------------------------------------------------
# Weyl algebra
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _reorder(alpha: tuple, beta: tuple) -> tuple:
    """Normal-order ``D**alpha x**beta`` as ``sum c x**(beta-g) D**(alpha-g)``.

    Multivariate Leibniz rule: ``c = prod_i C(alpha_i, g_i) * beta_i! / (beta_i - g_i)!``.
    """
    per_axis = []
    for a, b in zip(alpha, beta):
        per_axis.append([(g, math.comb(a, g) * math.perm(b, g)) for g in range(min(a, b) + 1)])
    out = []
    for combo in itertools.product(*per_axis):
        g = tuple(c[0] for c in combo)
        n = math.prod(c[1] for c in combo)
        out.append((_tsub(beta, g), _tsub(alpha, g), n))
    return tuple(out)


class WeylOperator:
    """Normal-ordered differential operator ``sum c(s) x**beta D**alpha``.

    ``terms`` maps ``(beta, alpha, powers)`` to a scalar coefficient, where
    ``powers`` are the exponents of the time offsets ``(s_j - t)``; an empty
    ``powers`` tuple marks a purely numeric scalar.
    """

    __slots__ = ("dim", "terms")

    def __init__(self, dim: int, terms: Mapping | None = None):
        self.dim = int(dim)
        clean: dict = {}
        for key, v in (terms or {}).items():
            beta, alpha = tuple(int(e) for e in key[0]), tuple(int(e) for e in key[1])
            powers = _strip(tuple(int(e) for e in key[2])) if len(key) > 2 else ()
            _check_dims(self.dim, len(beta))
            _check_dims(self.dim, len(alpha))
            k = (beta, alpha, powers)
            clean[k] = clean.get(k, 0) + v
        self.terms = _normalize(clean)

    @classmethod
    def _raw(cls, dim: int, terms: dict) -> "WeylOperator":
        op = cls.__new__(cls)
        op.dim = dim
        op.terms = _normalize(terms)
        return op

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, dim: int) -> "WeylOperator":
        return cls._raw(dim, {})

    @classmethod
    def identity(cls, dim: int, c: Number = 1) -> "WeylOperator":
        z = (0,) * dim
        return cls._raw(dim, {(z, z, ()): c})

    @classmethod
    def derivative(cls, alpha: Iterable[int], c: Number = 1) -> "WeylOperator":
        alpha = tuple(alpha)
        return cls._raw(len(alpha), {((0,) * len(alpha), alpha, ()): c})

    @classmethod
    def multiplication(cls, beta: Iterable[int], c: Number = 1) -> "WeylOperator":
        beta = tuple(beta)
        return cls._raw(len(beta), {(beta, (0,) * len(beta), ()): c})

    @classmethod
    def from_polynomial(cls, p: Polynomial) -> "WeylOperator":
        z = (0,) * p.dim
        return cls._raw(p.dim, {(k, z, ()): v for k, v in p.terms.items()})

    @classmethod
    def scalar(cls, dim: int, s: TimeMonomial) -> "WeylOperator":
        z = (0,) * dim
        return cls._raw(dim, {(z, z, s.powers): s.coefficient})

    # -- inspection ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def is_numeric(self) -> bool:
        return all(not k[2] for k in self.terms)

    def time_variables(self) -> int:
        """Highest time-variable index referenced (0 when numeric)."""
        return max((len(k[2]) for k in self.terms), default=0)

    def derivative_order(self) -> int:
        return max((sum(k[1]) for k in self.terms), default=ZERO_DEGREE)

    def multiplier_order(self) -> int:
        return max((sum(k[0]) for k in self.terms), default=ZERO_DEGREE)

    def items(self) -> Iterator[tuple[MultiIndex, MultiIndex, TimeMonomial]]:
        for (beta, alpha, powers), c in sorted(self.terms.items()):
            yield MultiIndex(beta), MultiIndex(alpha), TimeMonomial(c, powers)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeylOperator):
            return NotImplemented
        return self.dim == other.dim and self.terms == other.terms

    __hash__ = None

    def __repr__(self) -> str:
        if not self.terms:
            return f"WeylOperator(dim={self.dim}, 0)"
        parts = []
        for (b, a, p), c in sorted(self.terms.items()):
            tm = "".join(f"(s{j + 1}-t)^{e}" for j, e in enumerate(p) if e)
            parts.append(f"{c!r}{tm}*x^{b}D^{a}")
        return f"WeylOperator(dim={self.dim}, {' + '.join(parts)})"

    # -- linear structure ---------------------------------------------------

    def __add__(self, other: "WeylOperator") -> "WeylOperator":
        if not isinstance(other, WeylOperator):
            return NotImplemented
        _check_dims(self.dim, other.dim)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0) + v
        return WeylOperator._raw(self.dim, out)

    def __neg__(self) -> "WeylOperator":
        return WeylOperator._raw(self.dim, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other: "WeylOperator") -> "WeylOperator":
        return self + (-other)

    def scale(self, c: Number) -> "WeylOperator":
        c = _clean(c)
        return WeylOperator._raw(self.dim, {k: v * c for k, v in self.terms.items()})

    def __mul__(self, c):
        if isinstance(c, (Number, np.generic)):
            return self.scale(c)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other: "WeylOperator") -> "WeylOperator":
        return weyl_compose(self, other)

    # -- transformations ----------------------------------------------------

    def then_derivative(self, alpha: Iterable[int]) -> "WeylOperator":
        """``self ∘ D**alpha`` (cheap: derivatives are already rightmost)."""
        alpha = tuple(alpha)
        out: dict = {}
        for (b, a, p), c in self.terms.items():
            k = (b, _tadd(a, alpha), p)
            out[k] = out.get(k, 0) + c
        return WeylOperator._raw(self.dim, out)

    def relabel_time(self, mapping: Mapping[int, int]) -> "WeylOperator":
        """Rename time variables (1-based); unmapped variables keep their index."""
        out: dict = {}
        for (b, a, p), c in self.terms.items():
            newp: dict = {}
            for j, e in enumerate(p, start=1):
                if e:
                    nj = mapping.get(j, j)
                    newp[nj] = newp.get(nj, 0) + e
            width = max(newp, default=0)
            powers = tuple(newp.get(j, 0) for j in range(1, width + 1))
            k = (b, a, powers)
            out[k] = out.get(k, 0) + c
        return WeylOperator._raw(self.dim, out)

    def evaluate_times(self, offsets) -> "WeylOperator":
        """Substitute numeric offsets ``s_j - t`` for every time variable."""
        out: dict = {}
        for (b, a, p), c in self.terms.items():
            val = c
            for e, u in zip(p, offsets):
                if e:
                    val = val * u**e
            if len(p) > len(offsets):
                raise ValueError("not enough time offsets supplied")
            k = (b, a, ())
            out[k] = out.get(k, 0) + val
        return WeylOperator._raw(self.dim, out)

    def pruned(self, relative: float) -> "WeylOperator":
        """Drop numeric terms smaller than ``relative`` times the largest one."""
        if not self.terms:
            return self
        big = max(abs(float(v)) for v in self.terms.values())
        cut = relative * big
        return WeylOperator._raw(self.dim, {k: v for k, v in self.terms.items() if abs(float(v)) >= cut})

    def restricted(self, max_multiplier_order: int) -> "WeylOperator":
        return WeylOperator._raw(
            self.dim, {k: v for k, v in self.terms.items() if sum(k[0]) <= max_multiplier_order}
        )

    def apply(self, p: Polynomial) -> Polynomial:
        """Action on a polynomial (requires numeric scalars)."""
        _check_dims(self.dim, p.dim)
        if not self.is_numeric():
            raise ValueError("operator still carries symbolic time variables")
        out = Polynomial.zero(self.dim)
        deriv_cache: dict = {}
        for (b, a, _), c in self.terms.items():
            if a not in deriv_cache:
                q = p
                for axis, e in enumerate(a):
                    for _ in range(e):
                        q = q.derivative(axis)
                deriv_cache[a] = q
            q = deriv_cache[a]
            if q.is_zero():
                continue
            out = out + Polynomial.monomial(self.dim, b, c) * q
        return out


def weyl_compose(A: WeylOperator, B: WeylOperator, *, max_multiplier_order: int | None = None) -> WeylOperator:
    """Normal-ordered product ``A ∘ B`` (apply ``B`` first, then ``A``).

    ``max_multiplier_order`` optionally drops result terms whose multiplier
    degree exceeds the bound; used when only the low-degree part matters.
    """
    _check_dims(A.dim, B.dim)
    out: dict = {}
    get = out.get
    for (b1, a1, p1), c1 in A.terms.items():
        for (b2, a2, p2), c2 in B.terms.items():
            c12 = c1 * c2
            p = _padd(p1, p2) if (p1 and p2) else (p1 or p2)
            for bb, aa, n in _reorder(a1, b2):
                beta = _tadd(b1, bb)
                if max_multiplier_order is not None and sum(beta) > max_multiplier_order:
                    continue
                key = (beta, _tadd(aa, a2), p)
                out[key] = get(key, 0) + c12 * n
    return WeylOperator._raw(A.dim, out)


def simplex_integrate(op: WeylOperator, h: int, t, T) -> WeylOperator:
    """Integrate every time monomial over ``t < s_1 < ... < s_h < T``.

    ``prod_j (s_j - t)**k_j`` integrates to ``c * (T - t)**p`` with
    ``p = sum_j (k_j + 1)`` and ``c = prod_j 1 / (k_1 + 1 + ... + k_j + j)``.
    Passing ``Fraction`` times keeps the result exact.
    """
    if h < 1:
        raise ValueError("need at least one time variable")
    v = T - t
    if v <= 0:
        raise ValueError("require t < T")
    exact = isinstance(v, (Fraction, int))
    cache: dict = {}
    out: dict = {}
    for (b, a, powers), c in op.terms.items():
        if len(powers) > h:
            raise ValueError(f"time variable s_{len(powers)} exceeds the {h} integration variables")
        if powers not in cache:
            p = 0
            w = Fraction(1) if exact else 1.0
            for j in range(h):
                p += (powers[j] if j < len(powers) else 0) + 1
                w = w / p
            cache[powers] = w * v**p
        k = (b, a, ())
        out[k] = out.get(k, 0) + c * cache[powers]
    return WeylOperator._raw(op.dim, out)


@lru_cache(maxsize=None)
def _compositions(n: int, h: int) -> tuple:
    out = []
    for cuts in itertools.combinations(range(1, n), h - 1):
        bounds = (0,) + cuts + (n,)
        out.append(tuple(bounds[i + 1] - bounds[i] for i in range(h)))
    return tuple(sorted(out))


def compositions(n: int, h: int) -> list[tuple[int, ...]]:
    """All ``h``-tuples of positive integers summing to ``n``, lexicographically sorted."""
    if n < 1 or not 1 <= h <= n:
        raise ValueError(f"need 1 <= h <= n, got n={n}, h={h}")
    return list(_compositions(n, h))
