"""Closed-form values for constant-coefficient models and the comparison heat kernel."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np
from scipy.stats import multivariate_normal, norm

from ..gaussian import kernel_from_a0
from ..payoffs import Call, Constant, Digital, ExpCall, GaussianBump


def exact_constant_solution(a0: Mapping[tuple, float], payoff, t: float, x, T: float) -> float:
    """``e^{int gamma} E[payoff(Y)]`` with ``Y`` Gaussian, for constant coefficients ``a0``.

    Supported payoffs: :class:`Call`, :class:`ExpCall`, :class:`Digital`
    (all on the first coordinate), :class:`GaussianBump` and :class:`Constant`.
    """
    k = kernel_from_a0(a0, t, T)
    mean = k.mean(np.atleast_1d(np.asarray(x, dtype=float)))
    mu, s = mean[0], math.sqrt(k.covariance[0, 0])
    if isinstance(payoff, Call):
        dd = (mu - payoff.strike) / s
        val = (mu - payoff.strike) * norm.cdf(dd) + s * norm.pdf(dd)
    elif isinstance(payoff, ExpCall):
        K = payoff.strike
        d1 = (mu - math.log(K) + s * s) / s
        val = math.exp(mu + 0.5 * s * s) * norm.cdf(d1) - K * norm.cdf(d1 - s)
    elif isinstance(payoff, Digital):
        val = norm.cdf((mu - payoff.strike) / s)
    elif isinstance(payoff, GaussianBump):
        d = k.dim
        c = np.broadcast_to(np.asarray(payoff.center, dtype=float), (d,))
        w2 = payoff.width**2
        cov = k.covariance + w2 * np.eye(d)
        val = payoff.height * (2 * math.pi * w2) ** (d / 2) * multivariate_normal(mean, cov).pdf(c)
    elif isinstance(payoff, Constant):
        val = payoff.value
    else:
        raise ValueError(f"no closed form for payoff {payoff!r}")
    return float(k.discount * val)


def heat_kernel_bound(M_plus_eps: float, t: float, x, T: float, y):
    """Isotropic Gaussian with variance ``2 (M + eps) (T - t)`` per axis, evaluated at ``y - x``."""
    if not M_plus_eps > 0:
        raise ValueError("M + eps must be positive")
    if not T > t:
        raise ValueError("require t < T")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    d = x.size
    if d == 1 and (y.ndim == 0 or y.shape[-1] != 1):
        y = y[..., None]
    r = y - x
    var = 2.0 * M_plus_eps * (T - t)
    out = np.exp(-0.5 * np.sum(r * r, axis=-1) / var) / (2 * math.pi * var) ** (d / 2)
    return out if np.ndim(out) else float(out)
