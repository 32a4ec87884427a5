"""Corrugation profiles and the single oscillatory step.

A step adds ``a^2 eta (x) eta`` to the induced tensor
``1/2 grad v (x) grad v + sym grad w`` up to an error of order ``1/lambda``:

    v~ = v + Gamma1(x, lambda x.eta) / lambda
    w~ = w - Gamma1 grad v / lambda + Gamma2 eta / lambda
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError, ParameterError
from .field import (
    Domain, Expr, NormEstimate, SymField, add, affine, as_expr, cos, evaluate_many, induced,
    lattice_axes, mul, sample_grid, scale, sin,
)
from .field.sym import op_norm

LAMBDA_CAP = 2 ** 24
MAX_LATTICE_SIDE = 4096
SAMPLES_PER_PERIOD = 6
PREFILTER_SIDE = 128


def gamma(a_value: float, t: float):
    """``(Gamma1, Gamma2, d_t Gamma1, d_t Gamma2)`` at amplitude ``a`` and phase ``t``."""
    a = float(a_value)
    if not a >= 0:
        raise ParameterError(f"amplitude must be nonnegative, got {a_value}")
    s2, c2 = math.sin(2 * math.pi * t), math.cos(2 * math.pi * t)
    s4, c4 = math.sin(4 * math.pi * t), math.cos(4 * math.pi * t)
    return (a / math.pi * s2, -a * a / (4 * math.pi) * s4, 2 * a * c2, -a * a * c4)


def gamma_array(a, t):
    """Vectorized :func:`gamma` over arrays."""
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(a < 0):
        raise ParameterError("amplitude must be nonnegative")
    w = 2 * np.pi * t
    return (a / np.pi * np.sin(w), -a * a / (4 * np.pi) * np.sin(2 * w),
            2 * a * np.cos(w), -a * a * np.cos(2 * w))


@dataclass(frozen=True)
class CorrugationProfile:
    """Closed-form profiles composed with the phase ``t = lambda x.eta``."""

    amplitude: Expr

    def gamma1(self, phase: Expr) -> Expr:
        return mul(scale(1.0 / math.pi, self.amplitude), sin(scale(2 * math.pi, phase)))

    def gamma2(self, phase: Expr) -> Expr:
        a = self.amplitude
        return mul(scale(-1.0 / (4 * math.pi), mul(a, a)), sin(scale(4 * math.pi, phase)))

    def dt_gamma1(self, phase: Expr) -> Expr:
        return mul(scale(2.0, self.amplitude), cos(scale(2 * math.pi, phase)))

    def dt_gamma2(self, phase: Expr) -> Expr:
        a = self.amplitude
        return scale(-1.0, mul(a, a, cos(scale(4 * math.pi, phase))))


@dataclass(frozen=True)
class StepOutcome:
    v_new: Expr
    w_new: tuple
    lam: float
    residual: NormEstimate
    eta: tuple = (1.0, 0.0)

    def record(self) -> dict:
        return {"lambda": self.lam, "eta": list(self.eta), "residual": self.residual.value,
                "resolution": self.residual.sample_resolution}

    def to_json(self) -> str:
        return json.dumps(self.record(), sort_keys=True)


def residual_resolution(lam: float, rect) -> float:
    """``6 lambda`` samples per unit length, capped at 4096 lattice points per side."""
    side = max(rect.width, rect.height)
    return max(8.0, min(SAMPLES_PER_PERIOD * lam, (MAX_LATTICE_SIDE - 1) / side))


def _unit(eta):
    e = np.asarray(eta, dtype=float)
    n = float(np.hypot(*e))
    if not n > 0:
        raise ParameterError("direction must be nonzero")
    return (float(e[0] / n), float(e[1] / n))


def corrugate(v: Expr, w, a: Expr, eta, lam: float):
    """The step ansatz ``(v~, w~)`` as expression trees, without measurement."""
    eta = _unit(eta)
    a = as_expr(a)
    if a.is_zero:
        return v, tuple(w)
    phase = affine(0.0, lam * eta[0], lam * eta[1])
    prof = CorrugationProfile(a)
    g1 = scale(1.0 / lam, prof.gamma1(phase))
    g2 = scale(1.0 / lam, prof.gamma2(phase))
    v_new = add(v, g1)
    w_new = (add(w[0], scale(-1.0, mul(g1, v.diff(0))), scale(eta[0], g2)),
             add(w[1], scale(-1.0, mul(g1, v.diff(1))), scale(eta[1], g2)))
    return v_new, w_new


def step_error_field(v, w, v_new, w_new, a, eta) -> SymField:
    """``induced(v~, w~) - induced(v, w) - a^2 eta (x) eta``."""
    eta = _unit(eta)
    gained = SymField.outer(eta, mul(a, a))
    return induced(v_new, w_new) - induced(v, w) - gained


def _check_amplitude(a, domain, resolution=64):
    (vals,) = sample_grid([a], domain, resolution)
    lo = float(np.min(vals))
    if lo < 0:
        raise ParameterError(f"amplitude is negative somewhere (min {lo:.3g})")


def step(v: Expr, w, a: Expr, eta, lam: float, domain: Domain | None = None,
         l: float | None = None, resolution: float | None = None,
         reject_above: float | None = None) -> StepOutcome:
    """One corrugation step with its measured residual on the closed rectangle.

    With ``reject_above`` the residual may be reported from a sub-lattice
    when that alone already exceeds the threshold.
    """
    if not lam > 1:
        raise ParameterError(f"frequency must exceed 1, got {lam}")
    if l is not None and not lam * l > 1:
        raise ParameterError(f"frequency {lam} must exceed 1/l = {1.0 / l}")
    domain = domain or Domain.unit_square()
    a = as_expr(a)
    _check_amplitude(a, domain)
    eta = _unit(eta)
    v_new, w_new = corrugate(v, w, a, eta, lam)
    res = resolution or residual_resolution(lam, domain.rect)
    if a.is_zero:
        return StepOutcome(v_new, w_new, float(lam), NormEstimate(0.0, "sup", res), eta)
    err = step_error_field(v, w, v_new, w_new, a, eta)
    value, used = _measure(err, domain.rect, res, reject_above)
    return StepOutcome(v_new, w_new, float(lam), NormEstimate(value, "sup", used), eta)


def _measure(err: SymField, rect, res, reject_above):
    """Sup of the spectral norm on the lattice.

    With ``reject_above`` a strided sub-lattice is scanned first; its sup
    is a lower bound of the full one, so exceeding the threshold there
    settles the comparison without the full scan.
    """
    xs, ys = lattice_axes(rect, res)
    stride = max(1, math.ceil(max(len(xs), len(ys)) / PREFILTER_SIDE))
    grids = [(xs, ys)]
    if reject_above is not None and stride > 1:
        grids.insert(0, (xs[::stride], ys[::stride]))
    for k, (gx, gy) in enumerate(grids):
        X, Y = np.meshgrid(gx, gy)
        e11, e12, e22 = evaluate_many(err.entries, X.ravel(), Y.ravel())
        value = float(np.max(op_norm(e11, e12, e22)))
        if k == 0 and len(grids) == 2 and value > reject_above:
            return value, res / stride
    return value, res


def choose_lambda(v: Expr, w, a: Expr, eta, budget: float, lambda_floor: float = 2.0,
                  domain: Domain | None = None, l: float | None = None,
                  cap: float = LAMBDA_CAP) -> StepOutcome:
    """Smallest doubling of ``max(2, lambda_floor)`` whose measured residual meets ``budget``."""
    if not budget > 0:
        raise NonConvergenceError(f"residual budget {budget} is unattainable")
    lam = max(2.0, float(lambda_floor))
    while l is not None and lam * l <= 1:
        lam *= 2.0
    last = None
    while lam <= cap:
        out = step(v, w, a, eta, lam, domain, l, reject_above=budget)
        if out.residual.value <= budget:
            return out
        last = out.residual.value
        lam *= 2.0
    raise NonConvergenceError(
        f"no frequency up to {cap:g} meets residual budget {budget:g} (last residual {last:.3g})",
        last_residual=last, last_lambda=lam / 2.0)
