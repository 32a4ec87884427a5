"""One stage of the iteration.

``stage_c1`` cancels a positive definite defect up to a small remainder
with one step per rank-one term. ``stage_holder`` mollifies, shifts ``w``
so the defect sits near a multiple of the identity, and runs exactly three
steps on a geometric frequency schedule.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .decomp import basis_for, calibrate_r0, decompose_field, three_term_system
from .errors import DecompositionError, ParameterError, SchemeError
from .field import (
    X1, X2, Domain, NormEstimate, SymField, add, defect_field, mollify, norm_estimate,
    sample_grid, scale, sup_vec,
)
from .field.mollifier import DEFAULT_QUAD_ORDER
from .field.sym import min_eig, op_norm
from .oscillate import LAMBDA_CAP, choose_lambda, residual_resolution, step

# drift and gradient increments are scanned on at most this many points per unit length
DRIFT_RESOLUTION_CAP = 1024
# the logged step parameters only need coarse estimates
DELTA_RESOLUTION = 16


@dataclass(frozen=True)
class StageParams:
    epsilon: float | None = None
    M: float | None = None
    sigma: float | None = None
    delta0: float = 0.1
    domain: Domain = field(default_factory=Domain.unit_square)
    resolution: float = 64
    decomp_resolution: float = 50
    quad_order: int = DEFAULT_QUAD_ORDER
    lambda_floor: float = 2.0
    lambda_cap: float = LAMBDA_CAP
    max_patches: int = 2000

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        if self.sigma is not None and not self.sigma > 1:
            raise ParameterError("sigma must exceed 1")
        if self.M is not None and not self.M > 0:
            raise ParameterError("M must be positive")


@dataclass
class StageReport:
    kind: str
    defect_before: NormEstimate
    defect_after: NormEstimate
    lambdas: list
    l: float | None = None
    shift: float = 0.0
    c1_margin: float = 0.0
    margin_before: float = 0.0
    delta: float | None = None
    budgets: list = field(default_factory=list)
    step_residuals: list = field(default_factory=list)
    n_terms: int = 0
    n0: int = 0
    grad_increment: float = 0.0
    v_drift: float = 0.0
    w_drift: float = 0.0
    deltas: list = field(default_factory=list)
    M: float | None = None
    sigma: float | None = None

    def record(self) -> dict:
        out = asdict(self)
        out["defect_before"] = self.defect_before.value
        out["defect_after"] = self.defect_after.value
        out["resolution"] = self.defect_after.sample_resolution
        return out

    def to_json(self) -> str:
        return json.dumps(self.record(), sort_keys=True)


def _sym_samples(S: SymField, domain, resolution):
    return sample_grid(S.entries, domain, resolution)


def pd_margin(D: SymField, domain, resolution: float) -> float:
    """Smallest eigenvalue of ``D`` over the lattice."""
    e11, e12, e22 = _sym_samples(D, domain, resolution)
    return float(np.min(min_eig(e11, e12, e22)))


def _defect_stats(D: SymField, domain, resolution):
    e11, e12, e22 = _sym_samples(D, domain, resolution)
    sup = float(np.max(op_norm(e11, e12, e22)))
    margin = float(np.min(min_eig(e11, e12, e22)))
    return NormEstimate(sup, "sup", resolution), margin


def _drifts(v, w, v_new, w_new, domain, resolution):
    dv = norm_estimate(v_new - v, domain, "sup", resolution).value
    dw = sup_vec((w_new[0] - w[0], w_new[1] - w[1]), domain, resolution)
    dg = sup_vec((v_new.diff(0) - v.diff(0), v_new.diff(1) - v.diff(1)), domain, resolution)
    return dv, dw, dg


def _drift_floor(v, a, drift_budget, domain, resolution):
    """Frequency above which the closed-form C0 change of one step is within ``drift_budget``.

    ``|v~ - v| <= a / (pi lam)`` and ``|w~ - w| <= (a |grad v| / pi + a^2 / (4 pi)) / lam``.
    """
    (av,) = sample_grid([a], domain, resolution)
    amax = float(np.max(av))
    gmax = sup_vec((v.diff(0), v.diff(1)), domain, resolution)
    return (amax * (1.0 + gmax) / math.pi + amax ** 2 / (4 * math.pi)) / drift_budget


def stage_c1(v, w, A: SymField, params: StageParams):
    """Reduce a positive definite defect below ``params.epsilon``, keeping it positive definite."""
    if params.epsilon is None:
        raise ParameterError("the C1 stage needs epsilon")
    eps = params.epsilon
    dom, res = params.domain, params.resolution
    D = defect_field(v, w, A)
    before, margin = _defect_stats(D, dom, res)
    if not margin > 0:
        raise DecompositionError(f"defect is not positive definite (min eigenvalue {margin:.6g})",
                                 eigenvalue=margin)
    delta = min(0.5, eps / (2.0 * before.value + 1e-12))
    system = decompose_field(D, dom, params.decomp_resolution, params.max_patches)
    n = system.count
    # the remaining defect is delta D minus the step errors; half of delta * margin
    # keeps it positive definite
    budget = min(eps / (2 * n), delta * margin / (2 * n))
    factor = math.sqrt(1.0 - delta)
    lam_floor = params.lambda_floor
    v_cur, w_cur = v, tuple(w)
    lambdas, residuals = [], []
    for a, eta in system.terms:
        a = scale(factor, a)
        lam_floor = max(lam_floor, _drift_floor(v_cur, a, eps / (2 * n), dom, res))
        out = choose_lambda(v_cur, w_cur, a, eta, budget, lam_floor, dom, cap=params.lambda_cap)
        v_cur, w_cur = out.v_new, out.w_new
        lambdas.append(out.lam)
        residuals.append(out.residual.value)
        lam_floor = max(lam_floor, out.lam)
    after, c1_margin = _defect_stats(defect_field(v_cur, w_cur, A), dom, res)
    drift_res = min(residual_resolution(max(lambdas), dom.rect), DRIFT_RESOLUTION_CAP)
    dv, dw, dg = _drifts(v, w, v_cur, w_cur, dom, drift_res)
    report = StageReport("c1", before, after, lambdas, c1_margin=c1_margin, margin_before=margin,
                         delta=delta, budgets=[budget] * n, step_residuals=residuals, n_terms=n,
                         n0=system.n0, grad_increment=dg, v_drift=dv, w_drift=dw)
    if not (after.value < eps and c1_margin > 0):
        raise SchemeError(f"C1 stage contract violated: defect {after.value:.4g} (target < {eps:.4g}), "
                          f"margin {c1_margin:.4g}", trace=[report.record()])
    return v_cur, w_cur, report


def _mollify_all(v, w, A, l, params):
    q, dom = params.quad_order, params.domain
    return (mollify(v, l, q, dom), tuple(mollify(c, l, q, dom) for c in w),
            A.map(lambda e: mollify(e, l, q, dom)))


def _max_scaled_norm(f, l, orders, domain, resolution):
    return max(l ** m * norm_estimate(f, domain, f"C{m}", resolution).value for m in orders)


def stage_holder(v, w, A: SymField, params: StageParams):
    """Mollify, shift ``w`` by a multiple of the identity map and run three steps."""
    if params.M is None or params.sigma is None:
        raise ParameterError("the Hoelder stage needs M and sigma")
    M, sigma = params.M, params.sigma
    dom, res = params.domain, params.resolution
    D = defect_field(v, w, A)
    before, margin = _defect_stats(D, dom, res)
    dn = before.value
    if not 0 < dn < params.delta0:
        raise ParameterError(f"defect norm {dn:.4g} must lie in (0, {params.delta0:g})")
    c2 = max(norm_estimate(v, dom, "C2", res).value,
             *(norm_estimate(c, dom, "C2", res).value for c in w), 1.0)
    if not M > c2:
        raise ParameterError(f"M = {M:g} must exceed max(|v|_2, |w|_2, 1) = {c2:.4g}")
    l = math.sqrt(dn) / M
    if not l < 1:
        raise ParameterError(f"mollification scale {l:.4g} must be below 1")
    vm, wm, Am = _mollify_all(v, w, A, l, params)
    Dm = defect_field(vm, wm, Am)
    dm = _defect_stats(Dm, dom, res)[0].value
    r0 = calibrate_r0()
    shift = 2.0 * (dm + dn) / r0
    w1 = (add(wm[0], scale(-shift, X1)), add(wm[1], scale(-shift, X2)))
    Dshift = defect_field(vm, w1, Am)
    system = three_term_system(Dshift, basis_for(np.eye(2)))

    dres = min(res, DELTA_RESOLUTION)
    amp_term = max(_max_scaled_norm(a, l, range(4), dom, dres) for a in system.amplitudes())
    grad_term = max(_max_scaled_norm(g, l, (1, 2), dom, dres) for g in (vm.diff(0), vm.diff(1)))
    deltas = [grad_term + amp_term]
    v_cur, w_cur = vm, w1
    lambdas, residuals = [], []
    for k, (a, eta) in enumerate(system.terms, start=1):
        lk = l / sigma ** (k - 1)
        lam = sigma ** k / l
        out = step(v_cur, w_cur, a, eta, lam, dom, l=lk, resolution=res)
        v_cur, w_cur = out.v_new, out.w_new
        lambdas.append(lam)
        residuals.append(out.residual.value)
        if k < 3:
            lk1 = l / sigma ** k
            gk = max(_max_scaled_norm(g, lk1, (1, 2), dom, dres) for g in (v_cur.diff(0), v_cur.diff(1)))
            deltas.append(max(deltas[-1], gk))
    after, c1_margin = _defect_stats(defect_field(v_cur, w_cur, A), dom, res)
    dv, dw, dg = _drifts(v, w, v_cur, w_cur, dom, res)
    report = StageReport("holder", before, after, lambdas, l=l, shift=shift, c1_margin=c1_margin,
                         margin_before=margin, step_residuals=residuals, n_terms=3, n0=3,
                         grad_increment=dg, v_drift=dv, w_drift=dw, deltas=deltas, M=M, sigma=sigma)
    return v_cur, w_cur, report
