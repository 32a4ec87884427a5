"""Rank-one decompositions of positive definite matrices and matrix fields.

Matrices are handled in the coordinates ``(G11, G12, G22)``. Distances in
matrix space are Frobenius: ``|H|^2 = h11^2 + 2 h12^2 + h22^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DecompositionError
from .field import Domain, Expr, SymField, add, const, lattice_points, mul, power, sample_grid, scale, sqrt
from .field.expr import bump
from .field.sym import eig_sym

_S2 = math.sqrt(2.0)
ZETA = np.array([
    [2.0 + _S2, -2.0 + _S2],
    [-2.0 + _S2, 2.0 + _S2],
]) / math.sqrt(12.0)
ZETA = np.vstack([ZETA, [1.0 / _S2, 1.0 / _S2]])
ZETA.setflags(write=False)

# radicands are floored here so derivatives stay finite where a bump vanishes
RADICAND_FLOOR = 1e-60


def _coords(m: np.ndarray) -> np.ndarray:
    return np.array([m[0, 0], m[0, 1], m[1, 1]])


def _matrix(c) -> np.ndarray:
    return np.array([[c[0], c[1]], [c[1], c[2]]], dtype=float)


def frobenius(h) -> np.ndarray:
    """Frobenius norm of coordinates ``(..., 3)``."""
    h = np.asarray(h, dtype=float)
    return np.sqrt(h[..., 0] ** 2 + 2.0 * h[..., 1] ** 2 + h[..., 2] ** 2)


def _outer_coords(u) -> np.ndarray:
    return np.array([u[0] * u[0], u[0] * u[1], u[1] * u[1]])


@lru_cache(maxsize=None)
def _psi() -> np.ndarray:
    Z = np.column_stack([_outer_coords(z) for z in ZETA])
    out = np.linalg.inv(Z)
    out.setflags(write=False)
    return out


def psi_functionals() -> np.ndarray:
    """Rows ``Psi_k`` with ``G = sum_k Psi_k(G) zeta_k (x) zeta_k``, acting on ``(G11, G12, G22)``."""
    return _psi().copy()


@lru_cache(maxsize=None)
def calibrate_r0(samples: int = 20000) -> float:
    """Positivity radius of ``Psi`` around the identity, with a 0.9 safety factor.

    ``Psi_k(Id + H) = Psi_k(Id) + Psi_k(H)`` is affine along rays, so the
    largest admissible radius in direction ``H`` is ``Psi_k(Id) / -Psi_k(H)``.
    Directions are a Fibonacci lattice on the unit Frobenius sphere.
    """
    psi = _psi()
    base = psi @ np.array([1.0, 0.0, 1.0])
    i = np.arange(samples) + 0.5
    z = 1.0 - 2.0 * i / samples
    rho = np.sqrt(1.0 - z * z)
    theta = math.pi * (1.0 + math.sqrt(5.0)) * i
    u = np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])
    h = np.column_stack([u[:, 0], u[:, 1] / _S2, u[:, 2]])
    slope = h @ psi.T
    with np.errstate(divide="ignore"):
        limits = np.where(slope < 0, base[None, :] / -slope, np.inf)
    r_star = float(np.min(limits))
    return 0.9 * min(r_star, 0.125 - 1e-3)


def _sqrtm(G: np.ndarray, p: float) -> np.ndarray:
    w, V = np.linalg.eigh(G)
    return (V * w ** p) @ V.T


@dataclass(frozen=True)
class BasisTriple:
    """Directions ``xi_k`` and functionals ``Phi_k`` adapted to a base point ``G0``."""

    zeta: np.ndarray
    xi: np.ndarray
    phi_coeffs: np.ndarray
    r0: float
    base: np.ndarray

    @property
    def radius(self) -> float:
        """Frobenius radius of the ball around ``base`` where every ``Phi_k > 0``."""
        inv_half = _sqrtm(self.base, -0.5)
        return self.r0 / float(np.sum(inv_half * inv_half))

    def phi(self, G) -> np.ndarray:
        """``Phi_k(G)`` for ``G`` a 2x2 matrix or coordinates ``(..., 3)``."""
        G = np.asarray(G, dtype=float)
        if G.shape[-2:] == (2, 2):
            G = np.stack([G[..., 0, 0], G[..., 0, 1], G[..., 1, 1]], axis=-1)
        return G @ self.phi_coeffs.T

    def reconstruct(self, phis) -> np.ndarray:
        """``sum_k phis[k] xi_k (x) xi_k`` as a 2x2 matrix."""
        out = np.zeros((2, 2))
        for p, x in zip(phis, self.xi):
            out += p * np.outer(x, x)
        return out


def basis_for(G0) -> BasisTriple:
    G0 = np.asarray(G0, dtype=float)
    G0 = 0.5 * (G0 + G0.T)
    lo = float(np.linalg.eigvalsh(G0)[0])
    if not lo > 0:
        raise DecompositionError(f"base point is not positive definite (eigenvalue {lo:.6g})",
                                 eigenvalue=lo)
    half = _sqrtm(G0, 0.5)
    inv_half = _sqrtm(G0, -0.5)
    raw = ZETA @ half.T
    lengths2 = np.sum(raw * raw, axis=1)
    xi = raw / np.sqrt(lengths2)[:, None]
    # column j = coordinates of inv_half E_j inv_half for E11, E12 + E21, E22
    basis = [np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 1.0], [1.0, 0.0]]),
             np.array([[0.0, 0.0], [0.0, 1.0]])]
    L = np.column_stack([_coords(inv_half @ E @ inv_half) for E in basis])
    coeffs = lengths2[:, None] * (_psi() @ L)
    for a in (xi, coeffs, G0):
        a.setflags(write=False)
    return BasisTriple(ZETA, xi, coeffs, calibrate_r0(), G0)


@dataclass(frozen=True)
class RankOneSystem:
    """Terms ``(a_k, eta_k)`` with ``sum_k a_k^2 eta_k (x) eta_k`` equal to the decomposed field."""

    terms: tuple
    kind: str = "three-term"
    n0: int = 3
    bases: tuple = field(default=(), repr=False)

    @property
    def count(self) -> int:
        return len(self.terms)

    def amplitudes(self) -> list[Expr]:
        return [a for a, _ in self.terms]

    def as_symfield(self) -> SymField:
        e11, e12, e22 = [], [], []
        for a, eta in self.terms:
            a2 = mul(a, a)
            e11.append(scale(eta[0] * eta[0], a2))
            e12.append(scale(eta[0] * eta[1], a2))
            e22.append(scale(eta[1] * eta[1], a2))
        return SymField(add(*e11), add(*e12), add(*e22))


def _linear(coef, D: SymField) -> Expr:
    return add(scale(coef[0], D.e11), scale(coef[1], D.e12), scale(coef[2], D.e22))


def three_term_system(D: SymField, basis: BasisTriple) -> RankOneSystem:
    """``a_k = Phi_k(D)^(1/2)`` with directions ``xi_k``; valid where ``D`` stays in the basis ball."""
    terms = []
    for k in range(3):
        a = sqrt(_linear(basis.phi_coeffs[k], D), floor=RADICAND_FLOOR)
        terms.append((a, tuple(float(c) for c in basis.xi[k])))
    return RankOneSystem(tuple(terms), "three-term", 3, (basis,))


def _sample_coords(D: SymField, domain, resolution):
    e11, e12, e22 = sample_grid(D.entries, domain, resolution)
    return np.column_stack([e11.ravel(), e12.ravel(), e22.ravel()])


def _check_definite(C, domain, resolution):
    lo, _ = eig_sym(C[:, 0], C[:, 1], C[:, 2])
    i = int(np.argmin(lo))
    if not lo[i] > 0:
        rect = domain.rect if isinstance(domain, Domain) else domain
        X, Y, _ = lattice_points(rect, resolution)
        point = (float(X[i]), float(Y[i]))
        raise DecompositionError(
            f"field is not positive definite at {point}: eigenvalue {lo[i]:.6g}",
            point=point, eigenvalue=float(lo[i]))


def ball_radius(C) -> np.ndarray:
    """``r0 / |G^(-1/2)|_F^2 = r0 det G / tr G`` for coordinates ``(..., 3)``."""
    C = np.asarray(C, dtype=float)
    det = C[..., 0] * C[..., 2] - C[..., 1] ** 2
    return calibrate_r0() * det / (C[..., 0] + C[..., 2])


def _max_jump(C, shape) -> float:
    G = C.reshape(shape + (3,))
    jumps = [np.abs(np.diff(G, axis=a)).max() for a in (0, 1) if G.shape[a] > 1]
    return float(max(jumps)) if jumps else 0.0


def decompose_field(D: SymField, domain, resolution: float = 50, max_patches: int = 2000,
                    safety: float = 0.9, max_resolution: float = 1024) -> RankOneSystem:
    """Decompose a positive definite field into rank-one terms.

    The coefficients of a basis are linear, so their positivity set is a
    cone. If the trace-normalized sampled range fits in ``safety`` times the
    positivity ball around the midpoint of its bounding box, the three-term
    system at that midpoint is returned. Otherwise the sampled range is covered greedily by matrix
    cubes and a smooth partition of unity is composed with ``D``. For the
    covering the lattice is refined until neighbouring samples differ by
    less than a quarter cube width, so the cubes also cover the values of
    ``D`` between samples.
    """
    C = _sample_coords(D, domain, resolution)
    _check_definite(C, domain, resolution)
    Cn = C / (0.5 * (C[:, 0] + C[:, 2]))[:, None]
    mid = 0.5 * (Cn.min(axis=0) + Cn.max(axis=0))
    G0 = _matrix(mid)
    if np.linalg.eigvalsh(G0)[0] > 0:
        basis = basis_for(G0)
        if float(np.max(frobenius(Cn - mid))) < safety * basis.radius:
            return three_term_system(D, basis)
    rect = domain.rect if isinstance(domain, Domain) else domain
    h_min = 0.5 * safety * float(np.min(ball_radius(C)))
    shape = lattice_points(rect, resolution)[2]
    factor = math.ceil(4.0 * _max_jump(C, shape) / h_min)
    if factor > 1:
        fine = min(resolution * factor, max_resolution)
        C = _sample_coords(D, rect, fine)
        _check_definite(C, rect, fine)
    # samples closer than h_min / 8 are redundant for the cover
    q = h_min / 8.0
    _, keep = np.unique(np.floor(C / q).astype(np.int64), axis=0, return_index=True)
    return _covering_system(D, C[np.sort(keep)], max_patches, safety)


def _covering_system(D: SymField, C: np.ndarray, max_patches: int, safety: float) -> RankOneSystem:
    centers, halves = [], []
    uncovered = np.ones(C.shape[0], dtype=bool)
    while np.any(uncovered):
        if len(centers) >= max_patches:
            raise DecompositionError(
                f"covering of the sampled range needs more than {max_patches} patches")
        i = int(np.argmax(uncovered))
        basis = basis_for(_matrix(C[i]))
        # cube of half-width h has Frobenius corner distance 2h
        h = 0.5 * safety * basis.radius
        centers.append(basis)
        halves.append(h)
        inside = np.all(np.abs(C - C[i]) <= 0.5 * h, axis=1)
        uncovered &= ~inside
    support = np.zeros(C.shape[0], dtype=int)
    for basis, h in zip(centers, halves):
        support += np.all(np.abs(C - _coords(basis.base)) < h, axis=1)
    n0 = int(support.max())

    entries = D.entries
    root_bumps, bumps = [], []
    for basis, h in zip(centers, halves):
        g = _coords(basis.base)
        s2 = [mul(t, t) for t in (scale(1.0 / h, add(e, const(-c))) for e, c in zip(entries, g))]
        root_bumps.append(mul(*[bump(s, 0.5) for s in s2]))
        bumps.append(mul(*[bump(s, 1.0) for s in s2]))
    norm = power(add(*bumps), -0.5, floor=RADICAND_FLOOR)
    terms = []
    for basis, rb in zip(centers, root_bumps):
        for k in range(3):
            phi = sqrt(_linear(basis.phi_coeffs[k], D), floor=RADICAND_FLOOR)
            terms.append((mul(rb, norm, phi), tuple(float(c) for c in basis.xi[k])))
    return RankOneSystem(tuple(terms), "covering", 3 * n0, tuple(centers))
