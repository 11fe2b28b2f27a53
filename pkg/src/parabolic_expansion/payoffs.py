"""Terminal data used by pricing runs and the closed-form catalog.

Each payoff maps an ``(n, d)`` array of points to ``n`` values and carries
``kinks`` (locations along the first axis where it is not smooth, used to
split quadrature panels) and ``smoothness``, the class ``k`` in which the
payoff lies: ``k = 0`` bounded, ``k = 1`` Lipschitz, ``k = 2`` with a
Lipschitz gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _first_axis(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y[..., 0] if y.ndim > 1 else y


@dataclass(frozen=True)
class Call:
    """``max(y_0 - strike, 0)``."""

    strike: float = 0.0
    smoothness = 1

    @property
    def kinks(self) -> tuple[float, ...]:
        return (self.strike,)

    def __call__(self, y):
        return np.maximum(_first_axis(y) - self.strike, 0.0)


@dataclass(frozen=True)
class ExpCall:
    """``max(exp(y_0) - strike, 0)``: a call on the price when ``y_0`` is the log-price."""

    strike: float = 1.0
    smoothness = 1

    @property
    def kinks(self) -> tuple[float, ...]:
        return (math.log(self.strike),)

    def __call__(self, y):
        return np.maximum(np.exp(_first_axis(y)) - self.strike, 0.0)


@dataclass(frozen=True)
class Digital:
    """``1{y_0 > strike}``."""

    strike: float = 0.0
    smoothness = 0

    @property
    def kinks(self) -> tuple[float, ...]:
        return (self.strike,)

    def __call__(self, y):
        return (_first_axis(y) > self.strike).astype(float)


@dataclass(frozen=True)
class GaussianBump:
    """``height * exp(-|y - center|^2 / (2 width^2))``; ``center`` broadcasts over dimensions."""

    center: float | tuple = 0.0
    width: float = 1.0
    height: float = 1.0
    smoothness = 2
    kinks = ()

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        c = np.broadcast_to(np.asarray(self.center, dtype=float), y.shape[-1:])
        r2 = np.sum((y - c) ** 2, axis=-1)
        return self.height * np.exp(-0.5 * r2 / self.width**2)


@dataclass(frozen=True)
class Constant:
    value: float = 1.0
    smoothness = 2
    kinks = ()

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.full(y.shape[:-1] if y.ndim > 1 else y.shape, float(self.value))


PAYOFFS = {
    "call": Call,
    "exp_call": ExpCall,
    "digital": Digital,
    "gaussian_bump": GaussianBump,
    "constant": Constant,
}


def make_payoff(kind: str, **params):
    try:
        cls = PAYOFFS[kind]
    except KeyError:
        raise ValueError(f"unknown payoff {kind!r}; expected one of {sorted(PAYOFFS)}") from None
    return cls(**params)
