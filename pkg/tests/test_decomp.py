import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wforge.decomp import (
    ZETA, basis_for, calibrate_r0, decompose_field, frobenius, psi_functionals,
)
from wforge.errors import DecompositionError
from wforge.field import Domain, SymField, X1, X2, cos, sample_grid, sin

UNIT = Domain.unit_square(0.25)


def _outer(u):
    return np.outer(u, u)


def test_zeta_are_unit_vectors():
    assert np.allclose(np.linalg.norm(ZETA, axis=1), 1.0, atol=1e-15)
    assert np.allclose(ZETA[2], [1 / math.sqrt(2), 1 / math.sqrt(2)])


def test_psi_identity():
    psi = psi_functionals()
    assert np.max(np.abs(psi @ [1.0, 0.0, 1.0] - [0.75, 0.75, 0.5])) < 1e-12
    z3 = _outer(ZETA[2])
    assert np.allclose(psi @ [z3[0, 0], z3[0, 1], z3[1, 1]], [0, 0, 1], atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.tuples(*[st.floats(-5, 5)] * 3))
def test_psi_reconstructs(g):
    G = np.array([[g[0], g[1]], [g[1], g[2]]])
    p = psi_functionals() @ np.array(g)
    back = sum(pk * _outer(z) for pk, z in zip(p, ZETA))
    assert np.max(np.abs(back - G)) < 1e-12 * (1 + np.abs(G).max())


def test_r0_calibration():
    r0 = calibrate_r0()
    assert 0 < r0 < 1 / 8
    # brute-force sweep on the sphere of radius r0 with random directions
    rng = np.random.default_rng(1)
    u = rng.normal(size=(20000, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    H = np.column_stack([u[:, 0], u[:, 1] / math.sqrt(2), u[:, 2]]) * r0
    vals = (H + [1.0, 0.0, 1.0]) @ psi_functionals().T
    assert vals.min() > 0


def test_basis_identity_and_diag():
    b = basis_for(np.eye(2))
    assert np.allclose(b.xi, ZETA, atol=1e-15)
    assert np.allclose(b.phi_coeffs, psi_functionals(), atol=1e-14)
    G0 = np.diag([4.0, 1.0])
    b = basis_for(G0)
    half = np.diag([2.0, 1.0])
    lengths2 = np.sum((ZETA @ half) ** 2, axis=1)
    assert np.allclose(b.phi(G0), lengths2 * [0.75, 0.75, 0.5], rtol=1e-12)
    assert np.allclose(b.reconstruct(b.phi(G0)), G0, atol=1e-12)
    assert np.allclose(np.linalg.norm(b.xi, axis=1), 1.0)


def test_basis_rejects_indefinite():
    with pytest.raises(DecompositionError):
        basis_for(np.diag([1.0, -0.1]))


def _random_spd(rng):
    A = rng.normal(size=(2, 2))
    return A @ A.T + 0.2 * np.eye(2)


def _random_in_ball(rng, b, n):
    u = rng.normal(size=(n, 3))
    u /= frobenius(u)[:, None]
    rad = b.radius * rng.uniform(0, 1, size=n) ** (1 / 3)
    return b.base[[0, 0, 1], [0, 1, 1]] + u * rad[:, None]


def test_basis_positivity_and_reconstruction_in_ball():
    rng = np.random.default_rng(7)
    for _ in range(5):
        b = basis_for(_random_spd(rng))
        C = _random_in_ball(rng, b, 100)
        phis = b.phi(C)
        assert phis.min() > 0
        for c, p in zip(C, phis):
            G = np.array([[c[0], c[1]], [c[1], c[2]]])
            assert np.max(np.abs(b.reconstruct(p) - G)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.01, 100.0), seed=st.integers(0, 10_000))
def test_basis_cone_property(c, seed):
    rng = np.random.default_rng(seed)
    G0 = _random_spd(rng)
    G = _random_spd(rng)
    b, bc = basis_for(G0), basis_for(c * G0)
    assert np.allclose(bc.xi, b.xi, atol=1e-12)
    assert np.allclose(bc.phi(c * G), c * b.phi(G), rtol=1e-9, atol=1e-9)
    assert bc.radius == pytest.approx(c * b.radius, rel=1e-12)


def _reconstruction_error(system, D, res=49):
    R = system.as_symfield() - D
    return max(float(np.max(np.abs(v))) for v in sample_grid(R.entries, UNIT, res))


def test_constant_identity_field():
    c = 0.4
    s = decompose_field(SymField.identity(c), UNIT, 20)
    assert s.kind == "three-term" and s.count == 3
    amps = [float(sample_grid([a], UNIT, 2)[0][0, 0]) for a in s.amplitudes()]
    assert np.allclose(amps, np.sqrt(c * np.array([0.75, 0.75, 0.5])), rtol=1e-12)


def test_rank_one_plus_identity():
    z = ZETA[2]
    D = SymField.of(z[0] * z[0] + 0.5, z[0] * z[1], z[1] * z[1] + 0.5)
    s = decompose_field(D, UNIT, 20)
    assert _reconstruction_error(s, D, 19) < 1e-10


def test_indefinite_field_rejected():
    D = SymField.of(1.0, 0.0, X1 - 0.1)
    with pytest.raises(DecompositionError) as err:
        decompose_field(D, UNIT, 20)
    assert err.value.eigenvalue == pytest.approx(-0.1)
    assert err.value.point[0] == pytest.approx(0.0)


def test_three_term_field_path():
    D = SymField.of(1.0 + 0.02 * sin(2 * math.pi * X1), 0.01 * cos(2 * math.pi * X2), 1.0)
    s = decompose_field(D, UNIT, 50)
    assert s.kind == "three-term"
    assert _reconstruction_error(s, D) <= 1e-9 * 2
    lows = [float(np.min(v)) for v in sample_grid(s.amplitudes(), UNIT, 49)]
    assert min(lows) > 0


def test_covering_field_path():
    D = SymField.of(0.5 + 0.45 * sin(2 * math.pi * X1), 0.0, 0.6)
    s = decompose_field(D, UNIT, 50)
    assert s.kind == "covering"
    assert _reconstruction_error(s, D, 77) <= 1e-9 * 2
    vals = sample_grid(s.amplitudes(), UNIT, 49)
    assert all(np.all(np.isfinite(v)) and v.min() >= 0 for v in vals)
    # bounded multiplicity: nonzero amplitudes per point
    active = np.sum([v > 0 for v in vals], axis=0)
    assert active.max() <= s.n0


def test_covering_patch_cap():
    D = SymField.of(0.5 + 0.45 * sin(2 * math.pi * X1), 0.0, 0.6)
    with pytest.raises(DecompositionError, match="patches"):
        decompose_field(D, UNIT, 50, max_patches=3)


def test_scaled_identity_uses_one_basis():
    # the coefficients are linear, so mu(x) Id stays in the positive cone for any mu > 0
    mu = 0.1 + sin(math.pi * X1) * sin(math.pi * X2)
    D = SymField.of(mu, 0.0, mu)
    s = decompose_field(D, UNIT, 50)
    assert s.kind == "three-term" and s.n0 == 3
    assert _reconstruction_error(s, D) <= 1e-9 * 2
    lows = [float(np.min(v)) for v in sample_grid(s.amplitudes(), UNIT, 49)]
    assert min(lows) > 0
