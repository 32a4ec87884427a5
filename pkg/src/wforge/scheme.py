"""Iteration drivers.

``run_c1`` repeats the C1 stage along a summable tolerance schedule,
``run_holder`` repeats the Hoelder stage with geometrically growing norm
bounds, and ``run_full`` chains a Poisson preprocessing, the C1 phase, a
smooth proxy and the Hoelder phase.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dstn

from . import analysis
from .errors import ConfigError, InputError, ParameterError, PreconditionError, SchemeError, WForgeError
from .field import (
    Domain, Expr, SymField, as_expr, defect_field, evaluate_many, mollify, norm_estimate,
    sample_grid, sup_vec,
)
from .field.expr import SineSeries
from .field.gridio import write_grid
from .field.mollifier import DEFAULT_QUAD_ORDER
from .field.sym import min_eig, op_norm
from .oscillate import LAMBDA_CAP
from .stage import StageParams, stage_c1, stage_holder


def exponent_gate(alpha: float, beta: float):
    """``(ok, s)``: admissibility of ``alpha`` for ``beta`` and the midpoint decay exponent.

    ``s`` must satisfy ``6 alpha / (1 - alpha) < s < min(1, 6 beta / (2 - beta))``.
    """
    if not (0 < beta <= 1):
        return False, None
    if not (0 < alpha < min(1.0 / 7.0, beta / 2.0)):
        return False, None
    lo, hi = 6.0 * alpha / (1.0 - alpha), min(1.0, 6.0 * beta / (2.0 - beta))
    if not lo < hi:
        return False, None
    return True, 0.5 * (lo + hi)


def s_admissible(s: float, alpha: float, beta: float) -> bool:
    return 0 < s < min(1.0, 6.0 * beta / (2.0 - beta)) and alpha * (6.0 + s) - s < 0


def default_schedule(eps0: float = 0.04, n: int = 8) -> tuple:
    return tuple(eps0 * 2.0 ** -k for k in range(n))


@dataclass(frozen=True)
class SchemeConfig:
    alpha: float = 0.1
    beta: float = 1.0
    sigma: float = 8.0
    M0: float | None = None
    s: float | None = None
    frakC: float = 4.0
    epsilon_schedule: tuple = field(default_factory=default_schedule)
    max_stages: int = 5
    target_defect: float = 1e-3
    seed: int = 0
    delta0: float = 0.1
    c1_safety: float = 0.25
    sigma_s_floor: float = 4.0
    c_extra: float = 0.1
    poisson_modes: int = 64
    proxy_scale: float = 1e-3
    proxy_quad_order: int = 8
    quad_order: int = DEFAULT_QUAD_ORDER
    resolution: float = 64
    quad_resolution: float = 64
    lambda_cap: float = LAMBDA_CAP
    domain: Domain = field(default_factory=Domain.unit_square)

    def __post_init__(self):
        ok, s_mid = exponent_gate(self.alpha, self.beta)
        if not ok:
            raise ConfigError(f"alpha = {self.alpha:g} must satisfy 0 < alpha < min(1/7, beta/2) "
                              f"= {min(1 / 7, self.beta / 2):.6g} with 0 < beta <= 1 (beta = {self.beta:g})")
        if self.s is None:
            object.__setattr__(self, "s", s_mid)
        elif not s_admissible(self.s, self.alpha, self.beta):
            raise ConfigError(f"s = {self.s:g} must satisfy 0 < s < min(1, 6 beta/(2 - beta)) "
                              f"and alpha (6 + s) - s < 0")
        if not self.sigma > 1:
            raise ConfigError("sigma must exceed 1")
        eps = tuple(float(e) for e in self.epsilon_schedule)
        if not eps or any(not e > 0 for e in eps):
            raise ConfigError("epsilon_schedule must be a nonempty list of positive numbers")
        if not sum(math.sqrt(e) for e in eps) < 1:
            raise ConfigError("epsilon_schedule must have sum of square roots below 1")
        object.__setattr__(self, "epsilon_schedule", eps)
        if self.M0 is not None and not self.M0 > 0:
            raise ConfigError("M0 must be positive")
        if not self.frakC >= 1:
            raise ConfigError("frakC must be at least 1")
        if self.max_stages < 0:
            raise ConfigError("max_stages must be nonnegative")
        if not (0 < self.delta0 and 0 < self.c1_safety < 1 and self.target_defect > 0):
            raise ConfigError("delta0, c1_safety and target_defect must be positive (c1_safety < 1)")

    def stage_params(self, **kw) -> StageParams:
        return StageParams(delta0=self.delta0, domain=self.domain, resolution=self.resolution,
                           quad_order=self.quad_order, lambda_cap=self.lambda_cap, **kw)


@dataclass
class RunArtifacts:
    v_final: Expr
    w_final: tuple
    A: SymField
    stage_reports: list = field(default_factory=list)
    defect_trace: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    records: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    exports: dict = field(default_factory=dict)
    f: Expr | None = None

    def export(self, out_dir, resolution: float, domain: Domain) -> dict:
        """Write the run log, defect trace, final grids and per-stage ``v`` grids."""
        out = Path(out_dir)
        paths = write_run_log(out, self.records)
        rect = domain.rect
        xr, yr = (rect.x0, rect.x1), (rect.y0, rect.y1)
        grids = {"v": self.v_final, "w1": self.w_final[0], "w2": self.w_final[1]}
        for k, v in enumerate(self.snapshots):
            grids[f"v_stage{k}"] = v
        names = list(grids)
        vals = sample_grid([grids[n] for n in names], rect, resolution)
        for name, arr in zip(names, vals):
            paths[name] = out / f"{name}.wfg"
            write_grid(paths[name], arr, xr, yr)
        manifest = {"snapshots": [{"name": f"v_stage{k}", "phase": p} for k, p in enumerate(self.phases)],
                    "resolution": resolution, "rect": [rect.x0, rect.y0, rect.x1, rect.y1]}
        paths["manifest"] = out / "manifest.json"
        paths["manifest"].write_text(json.dumps(manifest, sort_keys=True) + "\n")
        self.exports = {k: str(p) for k, p in paths.items()}
        return self.exports


def trace_rows(records) -> list[tuple]:
    """``(index, phase, stage, defect)`` for every record carrying a defect."""
    rows = []
    for r in records:
        d = r.get("defect_after", r.get("defect"))
        if d is None:
            continue
        rows.append((len(rows), r.get("phase", ""), r.get("stage", ""), d))
    return rows


def write_run_log(out_dir, records) -> dict:
    """JSON-lines run log and the defect trace CSV derived from it."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"log": out / "run.jsonl", "trace": out / "defect_trace.csv"}
    paths["log"].write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    lines = ["index,phase,stage,defect"] + [f"{i},{p},{k},{d!r}" for i, p, k, d in trace_rows(records)]
    paths["trace"].write_text("\n".join(lines) + "\n")
    return paths


def _tag(err: WForgeError, phase: str, stage=None, trace=None) -> WForgeError:
    where = phase if stage is None else f"{phase} stage {stage}"
    if trace is not None and not getattr(err, "trace", None):
        err.trace = list(trace)
    if isinstance(err, SchemeError):
        err.phase = err.phase or phase
        err.stage = err.stage if err.stage is not None else stage
    else:
        err.phase, err.stage = phase, stage
    if err.args and not str(err.args[0]).startswith("["):
        err.args = (f"[{where}] {err.args[0]}", *err.args[1:])
    return err


def _defect_stats(D: SymField, domain, resolution):
    e11, e12, e22 = sample_grid(D.entries, domain, resolution)
    return float(np.max(op_norm(e11, e12, e22))), float(np.min(min_eig(e11, e12, e22)))


# -- Poisson preprocessing --------------------------------------------------


# steepness of the cutoff profile; 1.5 minimizes the truncation error at 64 modes
CUTOFF_KAPPA = 1.5


def _smooth_step(u, kappa: float = CUTOFF_KAPPA):
    """``1`` for ``u <= 0``, ``0`` for ``u >= 1``, smooth in between."""
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u < 1, np.exp(-kappa / np.maximum(1.0 - u, 1e-300)), 0.0)
        b = np.where(u > 0, np.exp(-kappa / np.maximum(u, 1e-300)), 0.0)
    return a / (a + b)


def _cutoff(x, y, inner, outer):
    """Product cutoff equal to one on ``inner`` and vanishing on the boundary of ``outer``."""
    out = np.ones_like(x)
    for t, lo, hi, olo, ohi in ((x, inner.x0, inner.x1, outer.x0, outer.x1),
                                (y, inner.y0, inner.y1, outer.y0, outer.y1)):
        left, right = lo - olo, ohi - hi
        if left > 0:
            out = out * _smooth_step((lo - t) / left)
        if right > 0:
            out = out * _smooth_step((t - hi) / right)
    return out


def poisson_dirichlet(f, domain: Domain, modes: int = 64) -> Expr:
    """Sine-series solution of ``-Laplace u = f`` on the extended rectangle with ``u = 0`` on its boundary.

    With a positive margin ``f`` is first multiplied by a smooth cutoff equal
    to one on the rectangle, so the equation holds exactly on the rectangle
    and the series converges fast.
    """
    outer, inner = domain.extended, domain.rect
    n = 4 * modes
    xs = outer.x0 + outer.width * np.arange(1, n + 1) / (n + 1)
    ys = outer.y0 + outer.height * np.arange(1, n + 1) / (n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    (fv,) = evaluate_many([as_expr(f)], X.ravel(), Y.ravel())
    fv = fv.reshape(X.shape)
    if not np.all(np.isfinite(fv)):
        raise InputError("f is not finite on the extended rectangle")
    if domain.margin > 0:
        fv = fv * _cutoff(X, Y, inner, outer)
    # type-I sine transform: coefficient of sin(m pi x / Lx) sin(k pi y / Ly)
    coef = dstn(fv, type=1)[:modes, :modes] / (n + 1) ** 2
    m = np.arange(1, modes + 1)
    eig = np.pi ** 2 * ((m[:, None] / outer.width) ** 2 + (m[None, :] / outer.height) ** 2)
    coef = coef / eig
    if not np.all(np.isfinite(coef)):
        raise InputError("sine coefficients are not finite")
    coef[np.abs(coef) < 1e-300] = 0.0
    return SineSeries(coef, outer)


def solve_A0_from_f(f, domain: Domain, c_extra: float = 0.0, v0: Expr | None = None,
                    w0=None, modes: int = 64, resolution: float = 64) -> SymField:
    """``(lambda + c) Id`` with ``-Laplace lambda = f``, so ``-curl curl A0 = f``.

    ``c`` adds ``c_extra`` to whatever keeps the initial defect against
    ``(v0, w0)`` positive semidefinite on the lattice.
    """
    lam = poisson_dirichlet(f, domain, modes)
    v0 = as_expr(v0 if v0 is not None else 0.0)
    w0 = tuple(as_expr(c) for c in (w0 if w0 is not None else (0.0, 0.0)))
    _, low = _defect_stats(defect_field(v0, w0, SymField.identity(lam)), domain, resolution)
    c = c_extra + max(0.0, -low)
    return SymField.identity(lam + c)


# -- C1 scheme ----------------------------------------------------------------


def run_c1(v0: Expr, w0, A0: SymField, config: SchemeConfig, target: float | None = None) -> RunArtifacts:
    """Apply C1 stages with tolerances ``epsilon_schedule`` until the defect reaches ``target``."""
    target = config.target_defect if target is None else target
    dom, res = config.domain, config.resolution
    v, w = as_expr(v0), tuple(as_expr(c) for c in w0)
    d0, low = _defect_stats(defect_field(v, w, A0), dom, res)
    art = RunArtifacts(v, w, A0, defect_trace=[d0], phases=["initial"], snapshots=[v])
    art.records.append({"phase": "c1", "stage": 0, "defect": d0, "margin": low, "seed": config.seed})
    if not low > 0:
        raise _tag(PreconditionError(f"initial defect is not positive definite (min eigenvalue {low:.6g})"),
                   "c1", 0)
    d = d0
    for k, eps in enumerate(config.epsilon_schedule, start=1):
        if d <= target:
            break
        try:
            v, w, rep = stage_c1(v, w, A0, config.stage_params(epsilon=eps))
        except WForgeError as err:
            raise _tag(err, "c1", k, art.records)
        d = rep.defect_after.value
        rec = rep.record()
        rec.update(phase="c1", stage=k, epsilon=eps,
                   grad_ratio=rep.grad_increment / math.sqrt(eps))
        art.records.append(rec)
        art.stage_reports.append(rep)
        art.defect_trace.append(d)
        art.phases.append("c1")
        art.snapshots.append(v)
    art.v_final, art.w_final = v, w
    return art


def c1_summary(art: RunArtifacts, v0: Expr, domain, resolution) -> dict:
    """Total drift of ``v`` and the fitted gradient-increment constant."""
    reps = [r for r in art.records if r.get("phase") == "c1" and "epsilon" in r]
    drift = norm_estimate(art.v_final - v0, domain, "sup", resolution).value if reps else 0.0
    ratios = [r["grad_increment"] / math.sqrt(r["epsilon"]) for r in reps]
    return {"v_drift": drift, "epsilon_sum": sum(r["epsilon"] for r in reps),
            "grad_constant": max(ratios) if ratios else 0.0}


# -- Hoelder scheme -------------------------------------------------------


def _c2_bound(v, w, domain, resolution):
    return max(norm_estimate(v, domain, "C2", resolution).value,
               *(norm_estimate(c, domain, "C2", resolution).value for c in w), 1.0)


def run_holder(v: Expr, w, A: SymField, config: SchemeConfig,
               art: RunArtifacts | None = None) -> RunArtifacts:
    """Hoelder stages with ``M_k = (C (1 + |grad v0|) sigma^3)^k M0`` and a decay check per stage."""
    sigma, s = config.sigma, config.s
    if not sigma ** s > config.sigma_s_floor:
        raise _tag(ConfigError(f"sigma^s = {sigma ** s:.4g} must exceed {config.sigma_s_floor:g}"),
                   "holder")
    dom, res = config.domain, config.resolution
    v, w = as_expr(v), tuple(as_expr(c) for c in w)
    d0, _ = _defect_stats(defect_field(v, w, A), dom, res)
    if not 0 < d0 < config.delta0:
        raise _tag(ParameterError(f"defect norm {d0:.4g} must lie in (0, {config.delta0:g})"), "holder", 0)
    M0 = config.M0 if config.M0 is not None else 1.25 * _c2_bound(v, w, dom, res)
    g0 = sup_vec((v.diff(0), v.diff(1)), dom, res)
    growth = config.frakC * (1.0 + g0) * sigma ** 3
    if art is None:
        art = RunArtifacts(v, w, A, defect_trace=[d0], phases=["initial"], snapshots=[v])
    art.records.append({"phase": "holder", "stage": 0, "defect": d0, "M0": M0, "s": s,
                        "sigma": sigma, "seed": config.seed})
    v_start = v
    for k in range(1, config.max_stages + 1):
        Mk = growth ** (k - 1) * M0
        try:
            v, w, rep = stage_holder(v, w, A, config.stage_params(M=Mk, sigma=sigma))
        except WForgeError as err:
            raise _tag(err, "holder", k, art.records)
        d = rep.defect_after.value
        bound = sigma ** (-s * k) * d0
        rec = rep.record()
        rec.update(phase="holder", stage=k, decay_bound=bound,
                   grad_holder=norm_estimate(v.diff(0), dom, "holder", res, alpha=config.alpha).value,
                   c2=norm_estimate(v, dom, "C2", res).value)
        art.records.append(rec)
        art.stage_reports.append(rep)
        art.defect_trace.append(d)
        art.phases.append("holder")
        art.snapshots.append(v)
        art.v_final, art.w_final = v, w
        if not d <= bound:
            raise SchemeError(
                f"[holder stage {k}] defect {d:.4g} exceeds the decay bound sigma^(-s k) |D0| = {bound:.4g}; "
                f"raise sigma, M0 or frakC", trace=list(art.records), phase="holder", stage=k)
    art.records.append({"phase": "holder", "summary": True,
                        "c1_distance": norm_estimate(v - v_start, dom, "C1", res).value})
    return art


# -- full pipeline --------------------------------------------------------


def _proxy(v, w, A, config: SchemeConfig):
    """Largest mollification scale (at most 8 probes) keeping the defect in ``(0, delta0)``."""
    dom, res, q = config.domain, config.resolution, config.proxy_quad_order

    def probe(l):
        vm = mollify(v, l, q, dom)
        wm = tuple(mollify(c, l, q, dom) for c in w)
        d, _ = _defect_stats(defect_field(vm, wm, A), dom, res)
        return vm, wm, d

    hi, lo = config.proxy_scale, config.proxy_scale / 1024.0
    best = None
    probes = []
    for l in (hi, lo):
        vm, wm, d = probe(l)
        probes.append((l, d))
        if 0 < d < config.delta0:
            best = (l, vm, wm, d)
            break
    if best is None:
        raise ParameterError(f"no proxy scale in [{lo:.3g}, {hi:.3g}] keeps the defect below {config.delta0:g}")
    if best[0] == lo:
        a, b = lo, hi
        while len(probes) < 8:
            mid = math.sqrt(a * b)
            vm, wm, d = probe(mid)
            probes.append((mid, d))
            if 0 < d < config.delta0:
                a, best = mid, (mid, vm, wm, d)
            else:
                b = mid
    return best, probes


def run_full(v0, w0, A0: SymField | None, f=None, config: SchemeConfig | None = None) -> RunArtifacts:
    """Poisson preprocessing, C1 phase, smooth proxy, Hoelder phase and weak Hessian residuals."""
    config = config or SchemeConfig()
    dom, res = config.domain, config.resolution
    v0 = as_expr(v0)
    w0 = tuple(as_expr(c) for c in w0)
    if f is not None:
        try:
            A0 = solve_A0_from_f(f, dom, config.c_extra, v0, w0, config.poisson_modes, res)
        except WForgeError as err:
            raise _tag(err, "poisson")
        f = as_expr(f)
    elif A0 is None:
        raise _tag(ParameterError("either A0 or f is required"), "poisson")
    else:
        f = analysis.curl_curl_source(A0)

    c1_target = config.delta0 * config.c1_safety
    art = run_c1(v0, w0, A0, config, target=c1_target)
    art.f = f
    if art.defect_trace[-1] > c1_target:
        raise SchemeError(f"[c1] schedule exhausted at defect {art.defect_trace[-1]:.4g} "
                          f"(target {c1_target:.4g})", trace=list(art.records), phase="c1")
    try:
        (l, vp, wp, dp), probes = _proxy(art.v_final, art.w_final, A0, config)
    except WForgeError as err:
        raise _tag(err, "proxy")
    art.records.append({"phase": "proxy", "l": l, "defect": dp, "probes": [list(p) for p in probes]})
    art.defect_trace.append(dp)
    art.phases.append("proxy")
    art.snapshots.append(vp)
    art.v_final, art.w_final = vp, wp
    n_before = len(art.snapshots)
    try:
        run_holder(vp, wp, A0, config, art)
    except SchemeError as err:
        _record_residuals(art, f, config, n_before - 1)
        err.trace = list(art.records)
        raise
    except WForgeError as err:
        raise _tag(err, "holder")
    _record_residuals(art, f, config, n_before - 1)
    return art


def _record_residuals(art: RunArtifacts, f, config: SchemeConfig, first: int):
    """Max weak Hessian residual over the standard battery for each snapshot from ``first`` on."""
    battery = analysis.standard_battery(config.domain)
    for k in range(first, len(art.snapshots)):
        vals = analysis.battery_residuals(art.snapshots[k], f, battery, config.quad_resolution,
                                          config.domain)
        row = {"phase": "analysis", "snapshot": k, "stage_phase": art.phases[k],
               "max_residual": max(vals), "residuals": vals}
        art.residuals.append(row)
        art.records.append(row)


def smooth_reference_floor(config: SchemeConfig) -> float:
    """Battery residual of a smooth reference solution at the configured quadrature resolution."""
    from .field import X1, X2, sin

    v_ref = sin(math.pi * X1) * sin(math.pi * X2) * (1.0 / math.pi)
    f_ref = analysis.det_hessian(v_ref)
    vals = analysis.battery_residuals(v_ref, f_ref, analysis.standard_battery(config.domain),
                                      config.quad_resolution, config.domain)
    return max(vals)


__all__ = [
    "RunArtifacts", "SchemeConfig", "c1_summary", "default_schedule", "exponent_gate",
    "poisson_dirichlet", "run_c1", "run_full", "run_holder", "s_admissible",
    "smooth_reference_floor", "solve_A0_from_f", "trace_rows", "write_run_log",
]
