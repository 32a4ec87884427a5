"""Verification instruments.

Weak Hessian residuals pair ``-1/2 curl curl (grad v (x) grad v)`` with
compactly supported bumps, degrees are boundary winding numbers, and the
gradient-image box count separates developable maps from flexible ones.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import DegreeUndefinedError, ParameterError
from .field import (
    X1, X2, Domain, Expr, Rect, SymField, as_expr, defect_field, evaluate_many, hessian,
)
from .field.expr import bump

GAUSS_ORDER = 4


def defect(v: Expr, w, A: SymField) -> SymField:
    """``A - (1/2 grad v (x) grad v + sym grad w)`` as an expression field."""
    return defect_field(v, w, A)


@dataclass(frozen=True)
class TestFunction:
    """Radial bump ``amplitude * exp(-1 / (1 - |x - center|^2 / radius^2))``."""

    __test__ = False

    center: tuple
    radius: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError("test function radius must be positive")

    def compose(self, u1: Expr, u2: Expr) -> Expr:
        """The bump evaluated at ``(u1, u2)``."""
        c1, c2 = self.center
        d1, d2 = as_expr(u1) - c1, as_expr(u2) - c2
        r2 = (d1 * d1 + d2 * d2) * (1.0 / self.radius ** 2)
        return self.amplitude * bump(r2)

    @property
    def expr(self) -> Expr:
        return self.compose(X1, X2)

    @property
    def support(self) -> Rect:
        c1, c2 = self.center
        r = self.radius
        return Rect(c1 - r, c2 - r, c1 + r, c2 + r)

    def scaled(self, c: float) -> "TestFunction":
        return TestFunction(self.center, self.radius, self.amplitude * c)


def standard_battery(domain: Domain | None = None) -> list[TestFunction]:
    """Ten bumps of radius 0.18 on a 5 x 2 layout inside the rectangle."""
    rect = (domain or Domain.unit_square()).rect
    out = []
    for fy in (0.3, 0.7):
        for fx in (0.2, 0.35, 0.5, 0.65, 0.8):
            out.append(TestFunction((rect.x0 + fx * rect.width, rect.y0 + fy * rect.height),
                                    0.18 * min(rect.width, rect.height)))
    return out


def gauss_nodes(rect: Rect, resolution: float, order: int = GAUSS_ORDER):
    """Composite Gauss-Legendre nodes and weights with ``resolution`` cells per unit length."""
    t, wt = np.polynomial.legendre.leggauss(order)

    def axis(a, b):
        n = max(1, int(math.ceil(resolution * (b - a) - 1e-9)))
        edges = np.linspace(a, b, n + 1)
        h = np.diff(edges)
        pts = (edges[:-1, None] + 0.5 * h[:, None] * (t[None, :] + 1)).ravel()
        return pts, (0.5 * h[:, None] * wt[None, :]).ravel()

    xs, wx = axis(rect.x0, rect.x1)
    ys, wy = axis(rect.y0, rect.y1)
    X, Y = np.meshgrid(xs, ys)
    return X.ravel(), Y.ravel(), np.outer(wy, wx).ravel()


def _check_support(phi: TestFunction, domain):
    rect = (domain or Domain.unit_square()).rect
    if not rect.contains_rect(phi.support):
        raise ParameterError(f"test function support {phi.support} leaves the domain {rect}")


def weak_hessian_residual(v: Expr, f, phi: TestFunction, quad_resolution: float = 128,
                          domain: Domain | None = None) -> float:
    """``|<Det D^2 v, phi> - <f, phi>|`` with the pairing moved onto ``phi``."""
    _check_support(phi, domain)
    p = phi.expr
    p11, p12, p22 = hessian(p)
    x, y, wts = gauss_nodes(phi.support, quad_resolution)
    v1, v2, q11, q12, q22, q, fv = evaluate_many(
        [v.diff(0), v.diff(1), p11, p12, p22, p, as_expr(f)], x, y)
    pairing = -0.5 * (v1 * v1 * q22 + v2 * v2 * q11 - 2.0 * v1 * v2 * q12)
    return float(abs(np.dot(wts, pairing - fv * q)))


def battery_residuals(v: Expr, f, battery, quad_resolution: float = 128,
                      domain: Domain | None = None) -> list[float]:
    return [weak_hessian_residual(v, f, phi, quad_resolution, domain) for phi in battery]


def det_hessian(v: Expr) -> Expr:
    """``d11 v d22 v - (d12 v)^2``."""
    h11, h12, h22 = hessian(v)
    return h11 * h22 - h12 * h12


def curl_curl_source(A: SymField) -> Expr:
    """``-curl curl A``, the right-hand side matched by ``A``."""
    e11, e12, e22 = A.entries
    return -(e11.diff(1).diff(1) + e22.diff(0).diff(0) - 2.0 * e12.diff(0).diff(1))


# -- degree ---------------------------------------------------------------


@dataclass(frozen=True)
class DegreeQuery:
    """Counterclockwise boundary polygon of ``U``, target point and refinement depth."""

    polygon: tuple
    y: tuple
    refinement: int = 14

    def __post_init__(self):
        p = np.asarray(self.polygon, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
            raise ParameterError("polygon needs at least three 2D vertices")
        if _signed_area(p) <= 0:
            raise ParameterError("polygon must be counterclockwise and nondegenerate")

    @property
    def vertices(self) -> np.ndarray:
        return np.asarray(self.polygon, dtype=float)


def _signed_area(p):
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


def disk_polygon(center=(0.0, 0.0), radius: float = 1.0, n: int = 64) -> tuple:
    t = 2 * np.pi * np.arange(n) / n
    return tuple((center[0] + radius * math.cos(a), center[1] + radius * math.sin(a)) for a in t)


def rect_polygon(rect: Rect) -> tuple:
    return ((rect.x0, rect.y0), (rect.x1, rect.y0), (rect.x1, rect.y1), (rect.x0, rect.y1))


def _map_fn(grad_v):
    if callable(grad_v) and not isinstance(grad_v, (tuple, list)):
        return grad_v
    exprs = [as_expr(g) for g in grad_v]

    def fn(x, y):
        return tuple(evaluate_many(exprs, x, y))

    return fn


@dataclass
class DegreeAnswer:
    degree: int
    clearance: float
    tolerance: float
    segments: int

    def record(self, query: DegreeQuery | None = None) -> dict:
        out = {"degree": self.degree, "clearance": self.clearance, "tolerance": self.tolerance,
               "segments": self.segments}
        if query is not None:
            out["query"] = {"polygon": [list(p) for p in query.polygon], "y": list(query.y)}
        return out


def _boundary_params(n_edges, depth):
    """Parameters ``edge + k / 2^depth`` along the polygon."""
    m = 2 ** depth
    return (np.arange(n_edges)[:, None] + np.arange(m)[None, :] / m).ravel()


def _points(verts, s):
    i = np.floor(s).astype(int) % len(verts)
    j = (i + 1) % len(verts)
    t = (s - np.floor(s))[:, None]
    return verts[i] * (1 - t) + verts[j] * t


def _winding(u, y):
    """Winding number of the closed polyline ``u`` (rows) around each row of ``y``."""
    d = u[None, :, :] - np.asarray(y, dtype=float).reshape(-1, 1, 2)
    ang = np.arctan2(d[..., 1], d[..., 0])
    inc = np.diff(np.concatenate([ang, ang[:, :1]], axis=1), axis=1)
    inc = (inc + np.pi) % (2 * np.pi) - np.pi
    return inc.sum(axis=1) / (2 * np.pi), np.max(np.abs(inc), axis=1)


def _adaptive_boundary(F, verts, y, max_depth):
    """Refine boundary parameters until every segment turns less than pi/2 and
    its image is shorter than a third of the clearance of ``y``."""
    s = np.arange(len(verts), dtype=float)
    step = np.ones_like(s)
    for _ in range(max_depth + 1):
        u = np.column_stack(F(*_points(verts, s).T))
        d = u - np.asarray(y, dtype=float)
        dist = np.hypot(d[:, 0], d[:, 1])
        nxt = np.roll(u, -1, axis=0)
        seg = np.hypot(*(nxt - u).T)
        ang = np.arctan2(d[:, 1], d[:, 0])
        inc = np.abs((np.roll(ang, -1) - ang + np.pi) % (2 * np.pi) - np.pi)
        bad = (inc >= np.pi / 2) | (3 * seg >= dist.min())
        if not bad.any() or step.min() <= 2.0 ** -max_depth:
            return s, step, u, seg, dist
        mid = s[bad] + 0.5 * step[bad]
        step[bad] *= 0.5
        s = np.concatenate([s, mid])
        step = np.concatenate([step, step[bad]])
        order = np.argsort(s)
        s, step = s[order], step[order]
    return s, step, u, seg, dist


def brouwer_degree(grad_v, query: DegreeQuery) -> DegreeAnswer:
    """Degree of ``grad_v`` on ``U`` at ``y`` as a boundary winding number.

    ``grad_v`` is a pair of expressions or a callable ``(x, y) -> (u1, u2)``.
    """
    F = _map_fn(grad_v)
    verts = query.vertices
    s, step, u, seg, dist = _adaptive_boundary(F, verts, query.y, query.refinement)
    clearance = float(dist.min())
    tolerance = 3.0 * float(seg.max())
    if not clearance > tolerance:
        raise DegreeUndefinedError(
            f"target {tuple(query.y)} is within {clearance:.3g} of the boundary image "
            f"(tolerance {tolerance:.3g})", clearance=clearance, tolerance=tolerance)
    w, _ = _winding(u, query.y)
    # one more uniform refinement must agree
    s2 = np.sort(np.concatenate([s, s + 0.5 * step]))
    u2 = np.column_stack(F(*_points(verts, s2).T))
    w2, _ = _winding(u2, query.y)
    deg, deg2 = int(round(w[0])), int(round(w2[0]))
    if deg != deg2 or abs(w[0] - deg) > 1e-6:
        raise DegreeUndefinedError(f"winding not stable under refinement ({w[0]:.6f} vs {w2[0]:.6f})",
                                   clearance=clearance, tolerance=tolerance)
    return DegreeAnswer(deg, clearance, tolerance, len(s))


def perturbed_map(v: Expr, delta: float):
    """``u_delta = grad v + delta (-x2, x1)``."""
    if delta == 0:
        return (v.diff(0), v.diff(1))
    return (v.diff(0) - delta * X2, v.diff(1) + delta * X1)


def perturbed_degree(v: Expr, delta: float, query: DegreeQuery) -> DegreeAnswer:
    return brouwer_degree(perturbed_map(v, delta), query)


def _in_polygon(verts, x, y):
    inside = np.zeros(np.shape(x), dtype=bool)
    n = len(verts)
    for k in range(n):
        (xa, ya), (xb, yb) = verts[k], verts[(k + 1) % n]
        crosses = (ya > y) != (yb > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = xa + (y - ya) * (xb - xa) / (yb - ya)
        inside ^= crosses & (x < xi)
    return inside


def degree_formula_residual(v: Expr, f, query: DegreeQuery, g: TestFunction,
                            quad_resolution: float = 128) -> float:
    """``|int_U (g o grad v) f - int g(y) deg(grad v, U, y) dy|``.

    The left side is integrated over the bounding box of ``U`` masked by the
    polygon, the right side over the support of ``g`` with the degree taken
    at each cell center.
    """
    verts = query.vertices
    gv = (v.diff(0), v.diff(1))
    F = _map_fn(gv)
    sup = g.support
    c = np.asarray(g.center, dtype=float)
    # refine the boundary image until it clears the support of g by three segment lengths
    for depth in range(query.refinement + 1):
        u = np.column_stack(F(*_points(verts, _boundary_params(len(verts), depth)).T))
        seg = float(np.max(np.hypot(*(np.roll(u, -1, axis=0) - u).T)))
        clearance = float(np.min(np.hypot(*(u - c).T))) - g.radius
        if clearance > 3 * seg:
            break
    else:
        raise DegreeUndefinedError(f"support of g comes within {clearance:.3g} of the boundary image",
                                   clearance=clearance, tolerance=3 * seg)

    box = Rect(verts[:, 0].min(), verts[:, 1].min(), verts[:, 0].max(), verts[:, 1].max())
    x, y, wts = gauss_nodes(box, quad_resolution)
    inside = _in_polygon(verts, x, y)
    gcomp, fv = evaluate_many([g.compose(*gv), as_expr(f)], x[inside], y[inside])
    lhs = float(np.dot(wts[inside], gcomp * fv))

    # degree is constant on each cell of the support of g
    n = max(1, int(math.ceil(quad_resolution * sup.width - 1e-9)))
    edges_x = np.linspace(sup.x0, sup.x1, n + 1)
    edges_y = np.linspace(sup.y0, sup.y1, n + 1)
    cx, cy = np.meshgrid(0.5 * (edges_x[1:] + edges_x[:-1]), 0.5 * (edges_y[1:] + edges_y[:-1]))
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    vals = g.expr
    deg = np.zeros(len(centers))
    live = np.hypot(*(centers - c).T) < g.radius + 0.75 * sup.width / n
    idx = np.flatnonzero(live)
    chunk = max(1, (1 << 22) // len(u))
    for k in range(0, len(idx), chunk):
        win, _ = _winding(u, centers[idx[k:k + chunk]])
        deg[idx[k:k + chunk]] = np.round(win)
    xq, yq, wq = gauss_nodes(sup, n / sup.width)
    (gq,) = evaluate_many([vals], xq, yq)
    cell_x = np.clip(((xq - sup.x0) / sup.width * n).astype(int), 0, n - 1)
    cell_y = np.clip(((yq - sup.y0) / sup.height * n).astype(int), 0, n - 1)
    rhs = float(np.dot(wq, gq * deg[cell_y * n + cell_x]))
    return abs(lhs - rhs)


def gradient_image_boxcount(v: Expr, domain, grid_n: int) -> int:
    """Occupied cells when sampled ``grad v`` is binned on a ``grid_n`` grid over its bounding box."""
    rect = domain.rect if isinstance(domain, Domain) else domain
    xs = np.linspace(rect.x0, rect.x1, grid_n)
    ys = np.linspace(rect.y0, rect.y1, grid_n)
    X, Y = np.meshgrid(xs, ys)
    g1, g2 = evaluate_many([v.diff(0), v.diff(1)], X.ravel(), Y.ravel())

    def bins(g):
        lo, hi = float(g.min()), float(g.max())
        span = hi - lo
        if span <= 1e-12 * max(1.0, abs(lo), abs(hi)):
            return np.zeros(g.shape, dtype=int)
        return np.clip(((g - lo) / span * grid_n).astype(int), 0, grid_n - 1)

    return int(len(np.unique(bins(g1) * grid_n + bins(g2))))


# -- reports ----------------------------------------------------------------


def write_residual_csv(path, rows) -> None:
    """Rows of ``(test_id, resolution, residual)`` plus optional extra columns."""
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        extra = sorted({k for r in rows for k in r} - {"test_id", "resolution", "residual"})
        writer.writerow(["test_id", "resolution", "residual", *extra])
        for r in rows:
            writer.writerow([r["test_id"], r["resolution"], repr(float(r["residual"])),
                             *(r.get(k, "") for k in extra)])


def degree_json(answer: DegreeAnswer, query: DegreeQuery, **extra) -> str:
    rec = answer.record(query)
    rec.update(extra)
    return json.dumps(rec, sort_keys=True)


def lattice_hessian_residual(values: np.ndarray, x_range, y_range, f_values, phi: TestFunction,
                             step: int = 1) -> float:
    """Weak Hessian residual of a gridded ``v`` with finite-difference gradients.

    ``f_values`` is sampled on the same grid; the pairing uses the trapezoid
    rule, which is spectrally accurate for the compactly supported integrand.
    """
    v = np.asarray(values, dtype=float)[::step, ::step]
    fv = np.asarray(f_values, dtype=float)[::step, ::step]
    ny, nx = v.shape
    xs = np.linspace(x_range[0], x_range[1], nx)
    ys = np.linspace(y_range[0], y_range[1], ny)
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    v2, v1 = np.gradient(v, hy, hx, edge_order=2)
    X, Y = np.meshgrid(xs, ys)
    p11, p12, p22 = hessian(phi.expr)
    q11, q12, q22, q = (a.reshape(X.shape) for a in evaluate_many(
        [p11, p12, p22, phi.expr], X.ravel(), Y.ravel()))
    integrand = -0.5 * (v1 * v1 * q22 + v2 * v2 * q11 - 2.0 * v1 * v2 * q12) - fv * q
    return float(abs(trapezoid(trapezoid(integrand, dx=hx, axis=1), dx=hy)))


__all__ = [
    "DegreeAnswer", "DegreeQuery", "TestFunction", "battery_residuals", "brouwer_degree",
    "curl_curl_source", "defect", "degree_formula_residual", "degree_json", "det_hessian",
    "disk_polygon", "gauss_nodes", "gradient_image_boxcount", "lattice_hessian_residual",
    "perturbed_degree", "perturbed_map", "rect_polygon", "standard_battery",
    "weak_hessian_residual", "write_residual_csv",
]
