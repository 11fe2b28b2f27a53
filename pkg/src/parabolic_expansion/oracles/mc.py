"""Euler-Maruyama Monte Carlo for the probabilistic representation.

``u(t, x) = E[exp(int_t^T a_0(s, X_s) ds) payoff(X_T)]`` where ``X`` has drift
``a_{e_i}`` and diffusion matrix ``C`` (``C_ii = 2 a_{2e_i}``,
``C_ij = a_{e_i+e_j}``).  Paths are simulated in fixed-size blocks, each with
its own Philox stream keyed by ``(seed, block)``, so the estimate does not
depend on how blocks are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..algebra import MultiIndex
from ..basis import CoefficientField
from ..errors import NumericalError


@dataclass(frozen=True)
class MCResult:
    estimate: float
    stderr: float
    paths: int
    steps: int


def _diffusion(field: CoefficientField, s: float, X: np.ndarray) -> np.ndarray:
    d = field.dim
    out = np.empty(X.shape[:-1] + (d, d))
    for i in range(d):
        out[..., i, i] = 2.0 * np.asarray(field.value(MultiIndex.unit(d, i, 2), s, X))
        for j in range(i + 1, d):
            out[..., i, j] = out[..., j, i] = field.value(MultiIndex.unit(d, i) + MultiIndex.unit(d, j), s, X)
    return out


def _correlated(C: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """``L Z`` per path with ``L L^T = C``; closed form for d = 2."""
    if C.shape[-1] == 2:
        c11, c12, c22 = C[:, 0, 0], C[:, 0, 1], C[:, 1, 1]
        schur = c22 - c12 * c12 / np.where(c11 > 0, c11, 1.0)
        if np.any(c11 <= 0) or np.any(schur <= 0):
            raise NumericalError("diffusion matrix not positive definite at a visited point")
        l11 = np.sqrt(c11)
        return np.stack([l11 * Z[:, 0], c12 / l11 * Z[:, 0] + np.sqrt(schur) * Z[:, 1]], axis=-1)
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("diffusion matrix not positive definite at a visited point") from exc
    return np.einsum("pij,pj->pi", L, Z)


def _block(field, payoff, t, x, T, steps, n, seed, block, antithetic):
    d = field.dim
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
    half = n // 2 if antithetic else n
    X = np.tile(x, (2 * half if antithetic else n, 1))
    logdisc = np.zeros(X.shape[0])
    dt = (T - t) / steps
    sq = math.sqrt(dt)
    units = [MultiIndex.unit(d, i) for i in range(d)]
    zero = MultiIndex.zero(d)
    has_killing = tuple(zero) in field.coefficients
    for k in range(steps):
        s = t + k * dt
        Z = rng.standard_normal((half, d))
        if antithetic:
            Z = np.concatenate([Z, -Z])
        if d == 1:
            var = 2.0 * np.asarray(field.value(MultiIndex.unit(1, 0, 2), s, X), dtype=float)
            if np.any(var < 0):
                raise NumericalError("negative diffusion coefficient at a visited point")
            dW = np.sqrt(var)[:, None] * Z
        else:
            dW = _correlated(_diffusion(field, s, X), Z)
        drift = np.stack([np.broadcast_to(field.value(u, s, X), X.shape[:1]) for u in units], axis=-1)
        if has_killing:
            logdisc += dt * np.asarray(field.value(zero, s, X), dtype=float)
        X = X + drift * dt + sq * dW
    vals = np.exp(logdisc) * np.asarray(payoff(X), dtype=float)
    if antithetic:
        vals = 0.5 * (vals[:half] + vals[half:])
    return vals.sum(), (vals**2).sum(), vals.size


def mc_solve(field: CoefficientField, payoff: Callable, t: float, x, T: float, paths: int = 100_000,
             steps: int = 200, seed: int = 0, block_size: int = 1 << 16, antithetic: bool = True,
             threads: int = 1) -> MCResult:
    """Estimate and standard error from ``paths`` Euler-Maruyama paths."""
    if not T > t:
        raise ValueError("require t < T")
    if paths < 2 or steps < 1:
        raise ValueError("need at least two paths and one step")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sizes = [block_size] * (paths // block_size)
    if paths % block_size:
        sizes.append(paths % block_size)
    jobs = [(field, payoff, t, x, T, steps, n, seed, b, antithetic) for b, n in enumerate(sizes)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda a: _block(*a), jobs))
    else:
        parts = [_block(*a) for a in jobs]
    # fixed reduction order keeps results bit-identical across thread counts
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    n = sum(p[2] for p in parts)
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0) * n / (n - 1)
    return MCResult(mean, math.sqrt(var / n), paths, steps)
