"""Built-in models in log-price form.

Each model is written as ``A = 1/2 sum (sigma sigma^T)_ij D_ij + sum mu_i D_i - lambda``
with analytic derivatives generated by sympy.  Degenerate diffusions are
mollified so the principal symbol stays uniformly elliptic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from ..basis import CoefficientField
from ..payoffs import ExpCall, GaussianBump

DERIVATIVE_ORDER = 6


@dataclass(frozen=True)
class Preset:
    name: str
    field: CoefficientField
    point: tuple[float, ...]
    payoffs: dict = field(default_factory=dict)
    description: str = ""
    #: constant coefficients (closed-form prices exist)
    constant: bool = False
    #: rate of the dominating heat kernel, larger than the top diffusion eigenvalue on the box
    heat_rate: float = 1.0

    @property
    def dim(self) -> int:
        return self.field.dim


def _ellipticity(values: np.ndarray) -> float:
    lo, hi = float(np.min(values)), float(np.max(values))
    return 1.05 * max(1.0 / lo, hi, 1.0)


def _local_vol_1d(name: str, sigma, killing=0, description: str = "", box=(-3.0, 3.0)) -> Preset:
    x = sp.Symbol("x0")
    a2 = sp.Rational(1, 2) * sigma**2
    exprs = {(2,): a2, (1,): -a2}
    if killing != 0:
        exprs[(0,)] = -killing
    grid = np.linspace(*box, 401)
    a2_vals = np.array([float(a2.subs(x, v)) for v in grid])
    fld = CoefficientField.from_sympy(
        1, exprs, [x], max_order=DERIVATIVE_ORDER, name=name, ellipticity=_ellipticity(a2_vals), box=box
    )
    return Preset(
        name,
        fld,
        (0.0,),
        {"call": ExpCall(1.0), "bump": GaussianBump(0.1, 0.25)},
        description,
        heat_rate=1.5 * float(a2_vals.max()),
    )


def black_scholes(sigma: float = 0.2, rate: float = 0.03) -> Preset:
    """Constant volatility with discounting at ``rate``."""
    x = sp.Symbol("x0")
    s2 = sp.Float(sigma) ** 2
    r = sp.Float(rate)
    exprs = {(2,): s2 / 2, (1,): r - s2 / 2, (0,): -r}
    fld = CoefficientField.from_sympy(
        1, exprs, [x], max_order=DERIVATIVE_ORDER, name="black_scholes", ellipticity=_ellipticity(np.array([sigma**2 / 2]))
    )
    return Preset(
        "black_scholes",
        fld,
        (0.0,),
        {"call": ExpCall(1.0), "bump": GaussianBump(0.1, 0.25)},
        "constant volatility, discount rate as killing",
        constant=True,
        heat_rate=0.75 * sigma**2,
    )


def tanh_localvol() -> Preset:
    x = sp.Symbol("x0")
    return _local_vol_1d("tanh_localvol", 0.2 + 0.1 * sp.tanh(x), description="sigma(x) = 0.2 + 0.1 tanh(x)")


def cev_smoothed(sigma0: float = 0.2, beta: float = 0.5, scale: float = 2.0) -> Preset:
    """CEV-type volatility ``sigma0 S^(beta-1)`` with the log-price squashed through ``scale * tanh(x / scale)``."""
    x = sp.Symbol("x0")
    sigma = sigma0 * sp.exp((beta - 1) * scale * sp.tanh(x / scale))
    return _local_vol_1d("cev_smoothed", sigma, description="smoothed CEV, beta = 0.5")


def killed_localvol() -> Preset:
    x = sp.Symbol("x0")
    lam = sp.Rational(1, 100) * (1 + 2 * x**2) / (1 + x**2)
    return _local_vol_1d(
        "killed_localvol", 0.2 + 0.1 * sp.tanh(x), killing=lam, description="tanh local vol with state-dependent killing"
    )


def heston_like_2d(kappa: float = 1.5, theta: float = 0.04, xi: float = 0.3, rho: float = -0.5,
                   delta: float = 0.01) -> Preset:
    """Log-price and variance with ``f(v) = sqrt(v^2 + delta^2)`` replacing ``v`` in the diffusion."""
    x, v = sp.symbols("x0 x1")
    f = sp.sqrt(v**2 + sp.Float(delta) ** 2)
    exprs = {
        (2, 0): f / 2,
        (0, 2): sp.Float(xi) ** 2 * f / 2,
        (1, 1): sp.Float(rho * xi) * f,
        (1, 0): -f / 2,
        (0, 1): sp.Float(kappa) * (sp.Float(theta) - v),
    }
    box = (-1.0, 0.2)
    vs = np.linspace(*box, 201)
    fv = np.sqrt(vs**2 + delta**2)
    eig = []
    for fval in fv:
        m = np.array([[fval / 2, rho * xi * fval / 2], [rho * xi * fval / 2, xi**2 * fval / 2]])
        eig.extend(np.linalg.eigvalsh(m))
    fld = CoefficientField.from_sympy(
        2, exprs, [x, v], max_order=DERIVATIVE_ORDER, name="heston_like_2d",
        ellipticity=_ellipticity(np.array(eig)), box=box,
    )
    return Preset(
        "heston_like_2d",
        fld,
        (0.0, theta),
        {"call": ExpCall(1.0), "bump": GaussianBump((0.1, theta), 0.25)},
        "stochastic variance with smoothed square root",
        heat_rate=1.5 * max(eig),
    )


PRESETS = {
    "black_scholes": black_scholes,
    "tanh_localvol": tanh_localvol,
    "cev_smoothed": cev_smoothed,
    "heston_like_2d": heston_like_2d,
    "killed_localvol": killed_localvol,
}


def preset(name: str) -> Preset:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
