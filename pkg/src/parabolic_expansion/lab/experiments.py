"""Pricing runs, density comparisons and convergence-rate sweeps.

Every ``run_*`` function returns an :class:`ExperimentResult` whose rows use
the column order in ``COLUMNS``.  Rows are computed independently and
emitted in a fixed order regardless of the thread count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy
import sympy as sp

from ..basis import CoefficientField, ExpansionScheme
from ..engine import ExpansionPlan, approximate_kernel, bootstrap_solve, solve
from ..errors import ConfigError
from ..gaussian import GaussianKernel, rates_from_coefficients
from ..oracles import FDGrid, exact_constant_solution, fd_density, fd_price, heat_kernel_bound, mc_solve
from ..payoffs import make_payoff
from .config import ExperimentConfig
from .presets import Preset, preset

log = logging.getLogger(__name__)

COLUMNS = {
    "price": ["N", "t", "x", "T", "value", "terms", "oracle", "oracle_error", "abs_error"],
    "convergence": ["N", "k", "horizon", "value", "oracle", "oracle_error", "error", "floor", "slope", "residual",
                    "expected", "passed"],
    "bootstrap": ["N", "k", "m", "value", "oracle", "oracle_error", "error", "floor", "slope", "residual",
                  "expected", "passed"],
    "density": ["N", "horizon", "x", "y", "approx", "oracle", "oracle_error", "abs_error", "bound", "ratio"],
}

FLOOR_FACTOR = 10.0


@dataclass
class ExperimentResult:
    kind: str
    rows: list[dict]
    summary: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def columns(self) -> list[str]:
        return COLUMNS[self.kind]


# ---------------------------------------------------------------------------
# model / plan construction
# ---------------------------------------------------------------------------


def model_from_config(cfg: ExperimentConfig) -> Preset:
    if cfg.preset:
        try:
            return preset(cfg.preset)
        except ValueError as exc:
            raise ConfigError(str(exc), section="model", key="preset", line=cfg.source.get(("model", "preset"))) from None
    xs = sp.symbols(" ".join(f"x{i}" for i in range(cfg.dim)))
    xs = [xs] if cfg.dim == 1 else list(xs)
    t = sp.Symbol("t")
    exprs = {}
    for alpha, raw in cfg.inline.items():
        try:
            expr = sp.sympify(raw, locals={str(s): s for s in xs} | {"t": t})
        except (sp.SympifyError, SyntaxError, TypeError) as exc:
            key = "a_" + "_".join(map(str, alpha))
            raise ConfigError(f"cannot parse expression: {exc}", section="model", key=key, line=cfg.source.get(("model", key))) from None
        unknown = expr.free_symbols - set(xs) - {t}
        if unknown:
            key = "a_" + "_".join(map(str, alpha))
            raise ConfigError(f"unknown symbols {sorted(map(str, unknown))}", section="model", key=key, line=cfg.source.get(("model", key)))
        exprs[alpha] = expr
    fld = CoefficientField.from_sympy(cfg.dim, exprs, xs, t, max_order=6, name=cfg.model_name,
                                      ellipticity=cfg.ellipticity)
    constant = all(not (e.free_symbols & (set(xs) | {t})) for e in exprs.values())
    pts = np.random.default_rng(0).uniform(-1, 1, (128, cfg.dim))
    top = float(np.linalg.eigvalsh(fld.diffusion_matrix(cfg.t, pts)).max())
    return Preset(cfg.model_name, fld, (0.0,) * cfg.dim, {}, "inline model", constant=constant, heat_rate=1.5 * top)


def payoff_from_config(cfg: ExperimentConfig):
    try:
        return make_payoff(cfg.payoff, **cfg.payoff_params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for payoff {cfg.payoff!r}: {exc}", section="payoff") from None


def plan_for(cfg: ExperimentConfig, model: Preset, N: int) -> ExpansionPlan:
    groups = None
    if cfg.scheme == "enhanced_taylor":
        groups = tuple(cfg.groups[:N]) if cfg.groups else tuple(range(1, N + 1))
        if len(groups) != N:
            raise ConfigError(f"need {N} group bounds for order {N}", section="scheme", key="groups")
    wc = None if cfg.weight_variance is None else cfg.weight_variance * np.eye(model.dim)
    try:
        scheme = ExpansionScheme(cfg.scheme, N, groups=groups, weight_covariance=wc)
    except ValueError as exc:
        raise ConfigError(str(exc), section="scheme") from None
    return ExpansionPlan(model.field, scheme, cfg.frozen, cfg.time_integration, cfg.quadrature_order)


def _points(cfg: ExperimentConfig, model: Preset) -> list[np.ndarray]:
    pts = cfg.points or (model.point,)
    out = []
    for p in pts:
        if len(p) != model.dim:
            raise ConfigError(f"point {p} does not have {model.dim} components", section="run", key="points")
        out.append(np.array(p, dtype=float))
    return out


def _warn_relaxed(cfg: ExperimentConfig) -> None:
    if cfg.payoff in ("call", "exp_call"):
        log.warning("call payoff: rates are reported empirically; the bounded-derivative hypothesis on the payoff is relaxed")


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def make_oracle(cfg: ExperimentConfig, model: Preset, payoff) -> Callable[[float, np.ndarray, float], tuple[float, float]]:
    kind = cfg.oracle
    fld = model.field
    cache: dict = {}

    def oracle(t, x, T):
        key = (t, tuple(x.tolist()), T)
        if key in cache:
            return cache[key]
        if kind == "fd":
            val = fd_price(fld, payoff, t, x, T, cells=cfg.fd_cells, steps=cfg.fd_steps, levels=cfg.fd_levels,
                           width_sd=cfg.fd_width_sd)
        elif kind == "mc":
            r = mc_solve(fld, payoff, t, x, T, paths=cfg.mc_paths, steps=cfg.mc_steps, seed=cfg.seed)
            val = (r.estimate, r.stderr)
        else:
            if not model.constant:
                raise ConfigError("the exact oracle needs a constant-coefficient model", section="oracle", key="kind")
            try:
                val = (exact_constant_solution(fld.leading(t, x), payoff, t, x, T), 0.0)
            except ValueError as exc:
                raise ConfigError(str(exc), section="payoff") from None
        cache[key] = val
        return val

    return oracle


def _pmap(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def fit_slope(xs, errors, floors) -> tuple[float, float, int]:
    """Least-squares slope of ``log error`` against ``log xs`` over non-floor rows."""
    pts = [(math.log(x), math.log(e)) for x, e, f in zip(xs, errors, floors) if not f and e > 0]
    if len(pts) < 2:
        return math.nan, math.nan, len(pts)
    X = np.array([p[0] for p in pts])
    Y = np.array([p[1] for p in pts])
    coef, res, *_ = np.polyfit(X, Y, 1, full=True)
    residual = float(math.sqrt(res[0] / len(pts))) if len(res) else 0.0
    return float(coef[0]), residual, len(pts)


def _fmt_point(x: np.ndarray):
    return float(x[0]) if x.size == 1 else ";".join(repr(float(v)) for v in x)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


def run_price(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    start = time.perf_counter()
    model = model_from_config(cfg)
    payoff = payoff_from_config(cfg)
    oracle = make_oracle(cfg, model, payoff)
    plans = {N: plan_for(cfg, model, N) for N in cfg.orders}
    jobs = [(x, h, N) for x in _points(cfg, model) for h in cfg.horizons for N in cfg.orders]

    def row(job):
        x, h, N = job
        T = cfg.t + h
        res = solve(plans[N], payoff, cfg.t, x, T)
        ov, oe = oracle(cfg.t, x, T)
        return {
            "N": N, "t": cfg.t, "x": _fmt_point(x), "T": T, "value": res.value,
            "terms": ";".join(repr(v) for v in res.terms), "oracle": ov, "oracle_error": oe,
            "abs_error": abs(res.value - ov),
        }

    rows = _pmap(row, jobs, threads)
    return ExperimentResult("price", rows, {"max_abs_error": max((r["abs_error"] for r in rows), default=0.0)},
                            time.perf_counter() - start)


def run_convergence(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Error against the oracle over the horizon sweep; slope of log error vs log(T - t) per N."""
    start = time.perf_counter()
    if len(cfg.horizons) < 2:
        raise ConfigError("convergence sweeps need at least two horizons", section="run", key="horizons")
    model = model_from_config(cfg)
    payoff = payoff_from_config(cfg)
    _warn_relaxed(cfg)
    oracle = make_oracle(cfg, model, payoff)
    x = _points(cfg, model)[0]
    k = cfg.smoothness
    # oracle values first (shared across N)
    refs = _pmap(lambda h: oracle(cfg.t, x, cfg.t + h), cfg.horizons, threads)
    rows, summary = [], {}
    for N in cfg.orders:
        plan = plan_for(cfg, model, N)
        vals = [solve(plan, payoff, cfg.t, x, cfg.t + h).value for h in cfg.horizons]
        errs = [abs(v - r[0]) for v, r in zip(vals, refs)]
        floors = [e < FLOOR_FACTOR * r[1] for e, r in zip(errs, refs)]
        slope, resid, used = fit_slope(cfg.horizons, errs, floors)
        expected = (N + k + 1) / 2
        passed = bool(slope >= expected - cfg.slope_tolerance) if used >= 2 else None
        summary[N] = {"slope": slope, "residual": resid, "expected": expected, "passed": passed, "points": used}
        for h, v, r, e, f in zip(cfg.horizons, vals, refs, errs, floors):
            rows.append({"N": N, "k": k, "horizon": h, "value": v, "oracle": r[0], "oracle_error": r[1], "error": e,
                         "floor": f, "slope": slope, "residual": resid, "expected": expected, "passed": passed})
    return ExperimentResult("convergence", rows, summary, time.perf_counter() - start)


def run_bootstrap(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Error of the m-step composition over the step sweep; slope of log error vs log(1/m)."""
    start = time.perf_counter()
    if not cfg.steps:
        raise ConfigError("bootstrap runs need a step sweep", section="run", key="steps")
    model = model_from_config(cfg)
    payoff = payoff_from_config(cfg)
    _warn_relaxed(cfg)
    oracle = make_oracle(cfg, model, payoff)
    x = _points(cfg, model)[0]
    h = cfg.horizons[0]
    T = cfg.t + h
    ref, ref_err = oracle(cfg.t, x, T)
    k = cfg.smoothness
    rows, summary = [], {}
    for N in cfg.orders:
        plan = plan_for(cfg, model, N)
        vals = _pmap(lambda m: float(bootstrap_solve(plan, payoff, cfg.t, x[None, :], T, m)[0]), cfg.steps, threads)
        errs = [abs(v - ref) for v in vals]
        floors = [e < FLOOR_FACTOR * ref_err for e in errs]
        slope, resid, used = fit_slope([1.0 / m for m in cfg.steps], errs, floors)
        expected = (N + k - 1) / 2
        passed = bool(slope >= expected - cfg.slope_tolerance) if used >= 2 else None
        summary[N] = {"slope": slope, "residual": resid, "expected": expected, "passed": passed, "points": used}
        for m, v, e, f in zip(cfg.steps, vals, errs, floors):
            rows.append({"N": N, "k": k, "m": m, "value": v, "oracle": ref, "oracle_error": ref_err, "error": e,
                         "floor": f, "slope": slope, "residual": resid, "expected": expected, "passed": passed})
    return ExperimentResult("bootstrap", rows, summary, time.perf_counter() - start)


def density_lattice(model: Preset, t: float, x0: np.ndarray, h: float, size: int, span: float):
    """Points ``x0 + sd * z`` for ``z`` in ``linspace(-span, span, size)`` along the first axis."""
    sd = math.sqrt(2.0 * float(model.field.value((2,) + (0,) * (model.dim - 1), t, x0)) * h)
    offsets = np.linspace(-span, span, size)
    pts = []
    for z in offsets:
        p = x0.copy()
        p[0] += sd * z
        pts.append(p)
    return pts, sd


def run_density(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Approximate vs reference fundamental solution on an (x, y) lattice per horizon.

    The lattice is ``size x size`` points spaced in leading-order standard
    deviations around the evaluation point; the ratio column divides the
    error by the dominating heat kernel.  The slope per N fits the sampled
    maximum ratio against ``T - t``.
    """
    start = time.perf_counter()
    model = model_from_config(cfg)
    if model.dim != 1 and cfg.oracle == "fd":
        log.warning("density lattice varies the first coordinate only")
    if cfg.oracle == "mc":
        raise ConfigError("density runs support the fd and exact oracles", section="oracle", key="kind")
    x0 = _points(cfg, model)[0]
    heat = cfg.heat_rate if cfg.heat_rate is not None else model.heat_rate
    rows, summary = [], {}
    worst = {N: [] for N in cfg.orders}
    for h in cfg.horizons:
        T = cfg.t + h
        pts, sd = density_lattice(model, cfg.t, x0, h, cfg.lattice, cfg.lattice_span)
        # align the lattice with grid nodes: half-width and cell count are multiples of its spacing
        spacing = 2 * cfg.lattice_span * sd / max(cfg.lattice - 1, 1)
        reach = int(math.ceil((cfg.fd_width_sd + cfg.lattice_span) * sd / spacing))
        half = reach * spacing
        cells = 2 * reach * max(1, int(math.ceil(cfg.fd_cells / (2 * reach))))

        def column(y):
            if cfg.oracle == "exact":
                if not model.constant:
                    raise ConfigError("the exact oracle needs a constant-coefficient model", section="oracle", key="kind")
                C, m, g = rates_from_coefficients(model.field.leading(cfg.t, y), model.dim)
                k = GaussianKernel(cfg.t, T, h * m, h * C, h * g)
                return [(k.discount * k.density(x, y), 0.0) for x in pts]
            grid = FDGrid(center=x0, half_width=half, cells=cells, steps=cfg.fd_steps, levels=cfg.fd_levels)
            sol = fd_density(model.field, cfg.t, T, y, grid)
            return [(sol.at(x), sol.error_at(x)) for x in pts]

        ref = _pmap(column, pts, threads)  # ref[j][i] = Gamma(x_i; y_j)
        for N in cfg.orders:
            plan = plan_for(cfg, model, N)
            peak = 0.0
            for i, x in enumerate(pts):
                sol = approximate_kernel(plan, cfg.t, x, T)
                for j, y in enumerate(pts):
                    approx = float(sol.density(y))
                    ov, oe = ref[j][i]
                    bound = float(heat_kernel_bound(heat, cfg.t, x, T, y))
                    ratio = abs(approx - ov) / bound
                    peak = max(peak, ratio)
                    rows.append({"N": N, "horizon": h, "x": _fmt_point(x), "y": _fmt_point(y), "approx": approx,
                                 "oracle": ov, "oracle_error": oe, "abs_error": abs(approx - ov), "bound": bound,
                                 "ratio": ratio})
            worst[N].append(peak)
    for N in cfg.orders:
        slope, resid, used = fit_slope(cfg.horizons, worst[N], [False] * len(worst[N]))
        expected = (N + 1) / 2
        summary[N] = {"slope": slope, "residual": resid, "expected": expected, "max_ratio": worst[N],
                      "passed": bool(slope >= expected - cfg.slope_tolerance) if used >= 2 else None}
    return ExperimentResult("density", rows, summary, time.perf_counter() - start)


RUNNERS = {"price": run_price, "convergence": run_convergence, "bootstrap": run_bootstrap, "density": run_density}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def write_result(result: ExperimentResult, path: str | Path, cfg: ExperimentConfig | None = None) -> Path:
    """CSV with a header row plus a ``.json`` sidecar (config echo, versions, timings, summary)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=result.columns)
        w.writeheader()
        for r in result.rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    meta = {
        "kind": result.kind,
        "config": cfg.echo() if cfg is not None else None,
        "summary": {str(k): v for k, v in result.summary.items()},
        "seconds": result.seconds,
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
                     "sympy": sp.__version__},
    }
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(meta, indent=2, default=_jsonable))
    return path


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    return str(v)
