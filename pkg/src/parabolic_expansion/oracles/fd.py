"""Crank-Nicolson reference solver for the backward Cauchy problem (d <= 2).

The grid is uniform, centred on the evaluation point so that it is a node at
every refinement level.  Boundary rows impose a vanishing second derivative
along the outward axis.  Several levels with halved ``h`` and ``dt`` are
combined by Richardson extrapolation, which also provides the error estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from ..basis import CoefficientField
from ..errors import NumericalError
from ..gaussian import GaussianKernel, rates_from_coefficients


@dataclass(frozen=True)
class FDGrid:
    """Grid settings at the coarsest level.

    ``half_width`` defaults to ``width_sd`` leading-order standard deviations
    per axis; ``rannacher`` implicit-Euler half steps damp kinks at start-up
    (default: 4 when the payoff declares kinks, else 0).
    """

    center: object
    half_width: object = None
    width_sd: float = 10.0
    cells: int = 200
    steps: int = 100
    levels: int = 3
    rannacher: int | None = None


@dataclass(frozen=True)
class FDSolution:
    """Values at ``t`` on the coarsest grid after Richardson extrapolation."""

    grids: tuple
    values: np.ndarray
    error: np.ndarray
    levels: tuple
    steps: tuple
    peclet: float
    boundary: str = "zero second derivative"

    def _interp(self, arr, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = []
        for g, v in zip(self.grids, x):
            h = g[1] - g[0]
            k = (v - g[0]) / h
            if abs(k - round(k)) > 1e-9 or not 0 <= round(k) < g.size:
                idx = None
                break
            idx.append(int(round(k)))
        if idx is not None:
            return float(arr[tuple(idx)])
        rgi = RegularGridInterpolator(self.grids, arr, method="cubic")
        return float(rgi(x[None, :])[0])

    def at(self, x) -> float:
        return self._interp(self.values, x)

    def error_at(self, x) -> float:
        return self._interp(self.error, x)


def _leading_sd(field: CoefficientField, t: float, T: float, center: np.ndarray) -> np.ndarray:
    d = field.dim
    return np.array(
        [math.sqrt(2.0 * float(field.value(tuple(np.eye(d, dtype=int)[i] * 2), t, center)) * (T - t)) for i in range(d)]
    )


def _stencils(dim: int, h: np.ndarray) -> dict:
    st = {}
    for i in range(dim):
        e = np.zeros(dim, dtype=int)
        e[i] = 1
        a1 = tuple(e)
        a2 = tuple(2 * e)
        st[a1] = [(tuple(e), 0.5 / h[i]), (tuple(-e), -0.5 / h[i])]
        st[a2] = [(tuple(e), 1.0 / h[i] ** 2), (tuple(0 * e), -2.0 / h[i] ** 2), (tuple(-e), 1.0 / h[i] ** 2)]
        for j in range(i + 1, dim):
            f = np.zeros(dim, dtype=int)
            f[j] = 1
            w = 0.25 / (h[i] * h[j])
            st[tuple(e + f)] = [
                (tuple(e + f), w), (tuple(e - f), -w), (tuple(-e + f), -w), (tuple(-e - f), w)
            ]
    st[(0,) * dim] = [((0,) * dim, 1.0)]
    return st


class _Operator:
    def __init__(self, field: CoefficientField, grids: list[np.ndarray]):
        self.field = field
        self.grids = grids
        self.shape = tuple(g.size for g in grids)
        self.size = int(np.prod(self.shape))
        self.h = np.array([g[1] - g[0] for g in grids])
        mesh = np.meshgrid(*grids, indexing="ij")
        self.points = np.stack([m.ravel() for m in mesh], axis=-1)
        multi = np.stack(np.unravel_index(np.arange(self.size), self.shape), axis=-1)
        self.multi = multi
        boundary = np.zeros(self.size, dtype=bool)
        for i, n in enumerate(self.shape):
            boundary |= (multi[:, i] == 0) | (multi[:, i] == n - 1)
        self.interior = np.flatnonzero(~boundary)
        self.boundary = np.flatnonzero(boundary)
        self.stencils = _stencils(field.dim, self.h)
        self._boundary_rows = self._extrapolation_rows()

    def _flat(self, multi: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(multi.T), self.shape)

    def _extrapolation_rows(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for p in self.boundary:
            mi = self.multi[p]
            for axis, n in enumerate(self.shape):
                if mi[axis] in (0, n - 1):
                    step = 1 if mi[axis] == 0 else -1
                    for k, w in enumerate((1.0, -2.0, 1.0)):
                        q = mi.copy()
                        q[axis] += k * step
                        rows.append(p)
                        cols.append(int(self._flat(q[None, :])[0]))
                        vals.append(w)
                    break
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))

    def matrix(self, s: float) -> sp.csr_matrix:
        """Generator on interior rows (boundary rows empty)."""
        rows, cols, vals = [], [], []
        pts = self.points[self.interior]
        base = self.multi[self.interior]
        for alpha, f in self.field.coefficients.items():
            coef = np.broadcast_to(np.asarray(f(s, pts), dtype=float), (pts.shape[0],))
            for off, w in self.stencils[tuple(alpha)]:
                rows.append(self.interior)
                cols.append(self._flat(base + np.array(off)))
                vals.append(coef * w)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.size, self.size)
        )

    def peclet(self, s: float) -> float:
        worst = 0.0
        pts = self.points[self.interior]
        for i in range(self.field.dim):
            e = np.zeros(self.field.dim, dtype=int)
            e[i] = 1
            a1 = np.abs(np.asarray(self.field.value(tuple(e), s, pts), dtype=float))
            a2 = np.asarray(self.field.value(tuple(2 * e), s, pts), dtype=float)
            worst = max(worst, float(np.max(a1 * self.h[i] / (2 * np.maximum(a2, 1e-300)))))
        return worst


def _march(op: _Operator, terminal: np.ndarray, t: float, T: float, steps: int, rannacher: int) -> np.ndarray:
    n = op.size
    eye_int = sp.diags(np.isin(np.arange(n), op.interior).astype(float)).tocsr()
    B = op._boundary_rows
    homogeneous = op.field.time_homogeneous
    dt = (T - t) / steps
    u = terminal.copy()
    cache: dict = {}

    def factor(kind: str, s: float, tau: float):
        key = (kind, tau) if homogeneous else (kind, tau, s)
        got = cache.get(key)
        if got is None:
            A = op.matrix(s)
            if kind == "ie":
                lhs = eye_int - tau * A + B
                rhs = None
            else:
                lhs = eye_int - 0.5 * tau * A + B
                rhs = eye_int + 0.5 * tau * A
            try:
                got = (splu(lhs.tocsc()), rhs)
            except RuntimeError as exc:
                raise NumericalError(f"singular finite-difference system: {exc}") from exc
            if homogeneous:
                cache[key] = got
        return got

    interior = np.zeros(n)
    interior[op.interior] = 1.0
    s = T
    # implicit-Euler half steps, then Crank-Nicolson
    for _ in range(rannacher):
        tau = 0.5 * dt
        lu, _ = factor("ie", s - tau, tau)
        u = lu.solve(u * interior)
        s -= tau
    for _ in range(steps - rannacher // 2):
        lu, rhs_op = factor("cn", s - 0.5 * dt, dt)
        u = lu.solve(rhs_op @ u)
        s -= dt
    return u


def _richardson(levels: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    table = [[v] for v in levels]
    for i in range(1, len(levels)):
        for k in range(1, i + 1):
            f = 4.0**k
            table[i].append((f * table[i][k - 1] - table[i - 1][k - 1]) / (f - 1.0))
    best = table[-1][-1]
    if len(levels) == 1:
        return best, np.full_like(best, np.nan)
    return best, np.abs(best - table[-1][-2])


def _setup(field: CoefficientField, t: float, T: float, grid: FDGrid, extra: np.ndarray | None = None):
    if field.dim > 2:
        raise ValueError("finite differences support d <= 2")
    if not T > t:
        raise ValueError("require t < T")
    if grid.cells % 2 or grid.cells < 4:
        raise ValueError("cells must be an even number >= 4")
    center = np.atleast_1d(np.asarray(grid.center, dtype=float))
    if grid.half_width is None:
        half = grid.width_sd * _leading_sd(field, t, T, center)
        if extra is not None:
            half = half + extra
    else:
        half = np.broadcast_to(np.asarray(grid.half_width, dtype=float), center.shape).copy()
    return center, half


def _level_grids(center, half, cells, level):
    n = cells * 2**level
    return [c + np.linspace(-w, w, n + 1) for c, w in zip(center, half)]


def fd_solve(field: CoefficientField, payoff: Callable, t: float, T: float, grid: FDGrid,
             tolerance: float | None = None) -> FDSolution:
    """Backward Crank-Nicolson solve of ``(d/dt + A) u = 0``, ``u(T) = payoff``."""
    center, half = _setup(field, t, T, grid)
    kinks = getattr(payoff, "kinks", ())
    rannacher = grid.rannacher if grid.rannacher is not None else (4 if kinks else 0)
    levels, steps = [], []
    peclet = 0.0
    coarse = None
    for lv in range(grid.levels):
        grids = _level_grids(center, half, grid.cells, lv)
        op = _Operator(field, grids)
        if lv == 0:
            coarse = grids
            peclet = op.peclet(t)
        nsteps = grid.steps * 2**lv
        terminal = np.asarray(payoff(op.points), dtype=float).reshape(-1)
        u = _march(op, terminal, t, T, nsteps, rannacher).reshape(op.shape)
        sl = tuple(slice(None, None, 2**lv) for _ in grids)
        levels.append(u[sl])
        steps.append(nsteps)
    values, error = _richardson(levels)
    sol = FDSolution(tuple(coarse), values, error, tuple(levels), tuple(steps), peclet)
    if tolerance is not None:
        err = sol.error_at(center)
        if not err <= tolerance:
            raise NumericalError(f"finite-difference error estimate {err:.3g} exceeds tolerance {tolerance:.3g}")
    return sol


def fd_price(field: CoefficientField, payoff: Callable, t: float, x, T: float, **grid_kwargs) -> tuple[float, float]:
    """Value and error estimate at ``x`` from a grid centred on ``x``."""
    sol = fd_solve(field, payoff, t, T, FDGrid(center=x, **grid_kwargs))
    return sol.at(x), sol.error_at(x)


def fd_density(field: CoefficientField, t: float, T: float, y, grid: FDGrid, mollifier_cells: float = 2.0) -> FDSolution:
    """``x -> Gamma(t, x; T, y)`` on the grid, from a mollified terminal delta at ``y``.

    The delta is a Gaussian of width ``mollifier_cells`` grid cells.  At each
    level the smoothing bias computed for the frozen-coefficient kernel (the
    leading Gaussian with coefficients frozen at ``y``) is subtracted; the
    remaining bias is even in the width and removed by Richardson
    extrapolation together with the discretisation error.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    center = np.atleast_1d(np.asarray(grid.center, dtype=float))
    center, half = _setup(field, t, T, grid, extra=np.abs(y - center))
    d = field.dim
    C, m, g = rates_from_coefficients(field.leading(t, y), d)
    v = T - t
    frozen = GaussianKernel(t, T, v * m, v * C, v * g)
    levels, steps = [], []
    coarse = None
    peclet = 0.0
    for lv in range(grid.levels):
        grids = _level_grids(center, half, grid.cells, lv)
        op = _Operator(field, grids)
        if lv == 0:
            coarse = grids
            peclet = op.peclet(t)
        eps = mollifier_cells * float(np.max(op.h))
        r2 = np.sum((op.points - y) ** 2, axis=-1)
        terminal = np.exp(-0.5 * r2 / eps**2) / (2 * math.pi * eps**2) ** (d / 2)
        nsteps = grid.steps * 2**lv
        u = _march(op, terminal, t, T, nsteps, grid.rannacher or 0)
        smoothed = GaussianKernel(t, T, v * m, v * C + eps**2 * np.eye(d), v * g)
        bias = frozen.discount * (smoothed.density(op.points, y) - frozen.density(op.points, y))
        u = (u - bias).reshape(op.shape)
        sl = tuple(slice(None, None, 2**lv) for _ in grids)
        levels.append(u[sl])
        steps.append(nsteps)
    values, error = _richardson(levels)
    return FDSolution(tuple(coarse), values, error, tuple(levels), tuple(steps), peclet)
