"""Rectangular domains and sample lattices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError


@dataclass(frozen=True)
class Rect:
    """Closed axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise DomainError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    @property
    def diameter(self) -> float:
        return math.hypot(self.width, self.height)

    def expand(self, d: float) -> "Rect":
        return Rect(self.x0 - d, self.y0 - d, self.x1 + d, self.y1 + d)

    def shrink(self, d: float) -> "Rect":
        return self.expand(-d)

    def intersect(self, other: "Rect | None") -> "Rect | None":
        if other is None:
            return self
        return Rect(max(self.x0, other.x0), max(self.y0, other.y0),
                    min(self.x1, other.x1), min(self.y1, other.y1))

    def contains_rect(self, other: "Rect", tol: float = 1e-12) -> bool:
        return (other.x0 >= self.x0 - tol and other.y0 >= self.y0 - tol
                and other.x1 <= self.x1 + tol and other.y1 <= self.y1 + tol)

    def contains(self, x, y, tol: float = 1e-12):
        x = np.asarray(x)
        y = np.asarray(y)
        return ((x >= self.x0 - tol) & (x <= self.x1 + tol)
                & (y >= self.y0 - tol) & (y <= self.y1 + tol))


def intersect_regions(regions) -> Rect | None:
    out = None
    for r in regions:
        if r is None:
            continue
        out = r if out is None else r.intersect(out)
    return out


@dataclass(frozen=True)
class Domain:
    """The rectangle Omega together with an extension margin.

    The extended rectangle ``Omega + margin`` is where mollification and
    Poisson solves are allowed to look.
    """

    rect_min: tuple[float, float] = (0.0, 0.0)
    rect_max: tuple[float, float] = (1.0, 1.0)
    margin: float = 0.25

    def __post_init__(self):
        if not (self.rect_min[0] < self.rect_max[0] and self.rect_min[1] < self.rect_max[1]):
            raise DomainError("rect_min must be componentwise below rect_max")
        if self.margin < 0:
            raise DomainError("margin must be nonnegative")

    @property
    def rect(self) -> Rect:
        return Rect(self.rect_min[0], self.rect_min[1], self.rect_max[0], self.rect_max[1])

    @property
    def extended(self) -> Rect:
        return self.rect.expand(self.margin)

    @classmethod
    def unit_square(cls, margin: float = 0.25) -> "Domain":
        return cls((0.0, 0.0), (1.0, 1.0), margin)


def lattice_axes(rect: Rect, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    """Endpoint-inclusive lattice with about ``resolution`` cells per unit length.

    Doubling the resolution of an integer-density lattice refines it, so
    every old node stays a node.
    """
    nx = max(1, int(math.ceil(resolution * rect.width - 1e-9)))
    ny = max(1, int(math.ceil(resolution * rect.height - 1e-9)))
    return np.linspace(rect.x0, rect.x1, nx + 1), np.linspace(rect.y0, rect.y1, ny + 1)


def lattice_points(rect: Rect, resolution: float) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    xs, ys = lattice_axes(rect, resolution)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    return X.ravel(), Y.ravel(), (len(ys), len(xs))
