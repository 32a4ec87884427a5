"""Sampled sup, C^m and Hoelder norm estimators.

All estimates are lower bounds of the true norms obtained from an
endpoint-inclusive lattice. Sup norms of matrix fields use the spectral
norm, vector fields the Euclidean norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import Domain, Rect, lattice_axes
from .expr import Expr, diff, evaluate_many
from .mollifier import DEFAULT_QUAD_ORDER, mollify
from .sym import SymField, op_norm


@dataclass(frozen=True)
class NormEstimate:
    value: float
    kind: str
    sample_resolution: float

    def __float__(self):
        return float(self.value)


def _rect(region) -> Rect:
    if isinstance(region, Domain):
        return region.rect
    return region


def sample_grid(exprs, region, resolution) -> list[np.ndarray]:
    """Values of ``exprs`` on the lattice of ``region``, each shaped ``(ny, nx)``."""
    rect = _rect(region)
    xs, ys = lattice_axes(rect, resolution)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vals = evaluate_many(list(exprs), X.ravel(), Y.ravel())
    return [v.reshape(X.shape) for v in vals]


def _parse_kind(kind, alpha):
    if isinstance(kind, tuple):
        kind, alpha = kind
    kind = str(kind).lower()
    if kind == "sup" or kind == "c0":
        return "sup", 0, None
    if kind.startswith("c") and kind[1:].isdigit():
        return f"C{int(kind[1:])}", int(kind[1:]), None
    if kind.startswith("holder"):
        if alpha is None:
            raise ValueError("Hoelder seminorm needs an exponent")
        if not (0.0 < alpha <= 1.0):
            raise ValueError("Hoelder exponent must lie in (0, 1]")
        return f"holder({alpha:g})", 0, float(alpha)
    raise ValueError(f"unknown norm kind {kind!r}")


def holder_seminorm_grid(values: np.ndarray, hx: float, hy: float, alpha: float) -> float:
    """``max |f(p) - f(q)| / |p - q|^alpha`` over lattice pairs at dyadic offsets.

    Offsets run along the axes and both diagonals (the other four of the
    eight directions give the same pairs), at index steps 1, 2, 4, ...
    up to the lattice extent.
    """
    ny, nx = values.shape
    best = 0.0
    step = 1
    while step < max(nx, ny):
        for di, dj in ((0, 1), (1, 0), (1, 1), (1, -1)):
            si, sj = di * step, dj * step
            if si >= ny or abs(sj) >= nx:
                continue
            if sj >= 0:
                a = values[si:, sj:]
                b = values[:ny - si, :nx - sj]
            else:
                a = values[si:, :nx + sj]
                b = values[:ny - si, -sj:]
            if a.size == 0:
                continue
            dist = math.hypot(si * hy, sj * hx)
            best = max(best, float(np.max(np.abs(a - b))) / dist ** alpha)
        step *= 2
    return best


def norm_estimate(field: Expr, domain, kind="sup", resolution: float = 64,
                  alpha: float | None = None) -> NormEstimate:
    """Estimate ``||field||`` on the closed rectangle of ``domain``.

    ``kind`` is ``"sup"``, ``"C<m>"`` (sum over orders ``j <= m`` of the
    largest sup of a ``j``-th partial derivative) or ``"holder"`` with
    ``alpha`` (the seminorm ``[f]_alpha``).
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2 points per unit length")
    label, order, alpha = _parse_kind(kind, alpha)
    rect = _rect(domain)
    if alpha is not None:
        (vals,) = sample_grid([field], rect, resolution)
        xs, ys = lattice_axes(rect, resolution)
        value = holder_seminorm_grid(vals, xs[1] - xs[0], ys[1] - ys[0], alpha)
        return NormEstimate(value, label, resolution)
    exprs, orders = [], []
    for j in range(order + 1):
        for i in range(j + 1):
            exprs.append(diff(field, (j - i, i)))
            orders.append(j)
    vals = sample_grid(exprs, rect, resolution)
    per_order = [0.0] * (order + 1)
    for j, v in zip(orders, vals):
        per_order[j] = max(per_order[j], float(np.max(np.abs(v))))
    return NormEstimate(float(sum(per_order)), label, resolution)


def sup_sym(S: SymField, domain, resolution: float) -> float:
    e11, e12, e22 = sample_grid(S.entries, domain, resolution)
    return float(np.max(op_norm(e11, e12, e22)))


def sup_vec(u, domain, resolution: float) -> float:
    a, b = sample_grid(list(u), domain, resolution)
    return float(np.max(np.hypot(a, b)))


def commutator_gap(f: Expr, g: Expr, l: float, alpha: float = 1.0, domain: Domain | None = None,
                   resolution: float = 64, quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    """Sampled ``||(fg) * phi_l - (f * phi_l)(g * phi_l)||_0`` on the closed rectangle.

    ``alpha`` does not enter the measurement; callers compare the result
    against ``C l^(2 alpha) [f]_alpha [g]_alpha``.
    """
    if domain is None:
        domain = Domain.unit_square()
    fg = mollify(f * g, l, quad_order, domain)
    ff = mollify(f, l, quad_order, domain)
    gg = mollify(g, l, quad_order, domain)
    a, b, c = sample_grid([fg, ff, gg], domain, resolution)
    return float(np.max(np.abs(a - b * c)))
