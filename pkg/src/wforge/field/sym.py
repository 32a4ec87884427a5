"""Symmetric 2x2 matrix fields and the induced-tensor algebra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import Expr, ZERO, add, as_expr, evaluate_many, mul, scale


@dataclass(frozen=True)
class SymField:
    """Symmetric matrix field ``[[e11, e12], [e12, e22]]``."""

    e11: Expr
    e12: Expr
    e22: Expr

    @classmethod
    def of(cls, e11, e12, e22) -> "SymField":
        return cls(as_expr(e11), as_expr(e12), as_expr(e22))

    @classmethod
    def identity(cls, c=1.0) -> "SymField":
        c = as_expr(c)
        return cls(c, ZERO, c)

    @classmethod
    def outer(cls, eta, coef=1.0) -> "SymField":
        """``coef * eta (x) eta`` for a constant vector ``eta``."""
        coef = as_expr(coef)
        return cls(scale(eta[0] * eta[0], coef), scale(eta[0] * eta[1], coef),
                   scale(eta[1] * eta[1], coef))

    @property
    def entries(self) -> tuple[Expr, Expr, Expr]:
        return (self.e11, self.e12, self.e22)

    def __add__(self, other: "SymField") -> "SymField":
        return SymField(add(self.e11, other.e11), add(self.e12, other.e12), add(self.e22, other.e22))

    def __sub__(self, other: "SymField") -> "SymField":
        return SymField(add(self.e11, scale(-1.0, other.e11)), add(self.e12, scale(-1.0, other.e12)),
                        add(self.e22, scale(-1.0, other.e22)))

    def scaled(self, c) -> "SymField":
        if isinstance(c, Expr):
            return SymField(mul(c, self.e11), mul(c, self.e12), mul(c, self.e22))
        return SymField(scale(c, self.e11), scale(c, self.e12), scale(c, self.e22))

    def map(self, fn) -> "SymField":
        return SymField(fn(self.e11), fn(self.e12), fn(self.e22))

    def sample(self, x, y) -> np.ndarray:
        """Entries at the points, shape ``(3, n)``."""
        return np.array(evaluate_many(list(self.entries), x, y))


def sym_outer(u, w) -> SymField:
    """``sym(u (x) w)`` for vector fields ``u``, ``w``."""
    return SymField(mul(u[0], w[0]),
                    scale(0.5, add(mul(u[0], w[1]), mul(u[1], w[0]))),
                    mul(u[1], w[1]))


def sym_grad(w) -> SymField:
    """``sym grad w`` for ``w = (w1, w2)``."""
    return SymField(w[0].diff(0), scale(0.5, add(w[0].diff(1), w[1].diff(0))), w[1].diff(1))


def induced(v: Expr, w) -> SymField:
    """``1/2 grad v (x) grad v + sym grad w``."""
    gv = (v.diff(0), v.diff(1))
    return sym_outer(gv, gv).scaled(0.5) + sym_grad(w)


def defect_field(v: Expr, w, A: SymField) -> SymField:
    """``A - (1/2 grad v (x) grad v + sym grad w)``."""
    return A - induced(v, w)


# -- pointwise 2x2 algebra on sampled entries ---------------------------------


def eig_sym(e11, e12, e22):
    """Closed-form eigenvalues ``(lo, hi)`` of sampled symmetric matrices."""
    half_tr = 0.5 * (e11 + e22)
    rad = np.hypot(0.5 * (e11 - e22), e12)
    return half_tr - rad, half_tr + rad


def min_eig(e11, e12, e22):
    return eig_sym(e11, e12, e22)[0]


def op_norm(e11, e12, e22):
    """Spectral norm ``max |eigenvalue|``."""
    half_tr = 0.5 * (e11 + e22)
    return np.abs(half_tr) + np.hypot(0.5 * (e11 - e22), e12)


def frob_norm(e11, e12, e22):
    return np.sqrt(e11 * e11 + 2.0 * e12 * e12 + e22 * e22)
