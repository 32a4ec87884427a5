"""The standard mollifier and its tensor Gauss-Legendre convolution rule."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import integrate

from ..errors import InsufficientExtensionError
from .expr import Expr, Mollified, X1, X2, bump, diff, evaluate_many, mul, scale

DEFAULT_QUAD_ORDER = 24


@lru_cache(maxsize=None)
def mollifier_constant() -> float:
    """``c`` with ``c * exp(-1/(1-|x|^2))`` of unit mass on the unit disk.

    In polar coordinates the mass is ``pi * int_0^1 exp(-1/(1-u)) du``.
    """
    # substitute s = 1 - u; the integrand is flat at s = 0
    val, _ = integrate.quad(lambda s: math.exp(-1.0 / s) if s > 0 else 0.0,
                            0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    return 1.0 / (math.pi * val)


def mollifier_expr() -> Expr:
    """``phi(z) = c exp(-1/(1-|z|^2))`` as an expression in the plane."""
    return scale(mollifier_constant(), bump(mul(X1, X1) + mul(X2, X2)))


class MollifierRule:
    """Quadrature for ``(f * d^k phi_l)(x) = sum_q f(x - y_q) K_q``.

    Nodes are the tensor Gauss-Legendre points of ``[-1, 1]^2`` that fall
    in the open unit disk, scaled by ``l``. The weights are rescaled so the
    discrete mass of ``phi`` is exactly one.
    """

    def __init__(self, scale: float, order: int = DEFAULT_QUAD_ORDER):
        if not (0.0 < scale < 1.0):
            raise ValueError("mollification scale must lie in (0, 1)")
        self.scale = float(scale)
        self.order = int(order)
        t, w = np.polynomial.legendre.leggauss(self.order)
        zx, zy = np.meshgrid(t, t, indexing="xy")
        wt = np.outer(w, w)
        inside = zx ** 2 + zy ** 2 < 1.0
        self._z = np.column_stack([zx[inside], zy[inside]])
        self._w = wt[inside]
        phi = evaluate_many([mollifier_expr()], self._z[:, 0], self._z[:, 1])[0]
        self.raw_mass = float(np.dot(phi, self._w))
        self._w = self._w / self.raw_mass
        self.offsets = self.scale * self._z
        self.offsets.setflags(write=False)
        self._kernels = {}

    @property
    def weights(self) -> np.ndarray:
        """Kernel for ``f * phi_l``: ``phi(z_q)`` times the normalized weights."""
        return self.kernel((0, 0))

    @property
    def size(self) -> int:
        return self._z.shape[0]

    def kernel(self, deriv=(0, 0)) -> np.ndarray:
        deriv = tuple(deriv)
        k = self._kernels.get(deriv)
        if k is None:
            dphi = diff(mollifier_expr(), deriv)
            vals = evaluate_many([dphi], self._z[:, 0], self._z[:, 1])[0]
            k = vals * self._w / self.scale ** (deriv[0] + deriv[1])
            k.setflags(write=False)
            self._kernels[deriv] = k
        return k

    def __hash__(self):
        return hash((self.scale, self.order))

    def __eq__(self, other):
        return (isinstance(other, MollifierRule) and self.scale == other.scale
                and self.order == other.order)

    def __repr__(self):
        return f"MollifierRule(l={self.scale}, order={self.order}, nodes={self.size})"


@lru_cache(maxsize=256)
def rule_for(scale: float, order: int = DEFAULT_QUAD_ORDER) -> MollifierRule:
    return MollifierRule(scale, order)


def mollify(field: Expr, l: float, quad_order: int = DEFAULT_QUAD_ORDER, domain=None) -> Expr:
    """Convolution ``field * phi_l``.

    With a ``domain`` the extension margin must cover the mollifier support
    and the inner field must be admissible on ``Omega + B(0, l)``.
    """
    if domain is not None:
        if domain.margin < l:
            raise InsufficientExtensionError(
                f"extension margin {domain.margin} is smaller than mollification scale {l}")
        need = domain.rect.expand(l)
        if field.region is not None and not field.region.contains_rect(need):
            raise InsufficientExtensionError(
                f"field is admissible on {field.region}, mollification at scale {l} needs {need}")
    return Mollified(field, rule_for(float(l), int(quad_order)))
