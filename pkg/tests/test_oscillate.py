import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wforge.errors import NonConvergenceError, ParameterError
from wforge.field import Domain, X1, X2, const, cos, norm_estimate, sample_grid, sin, sqrt
from wforge.oscillate import CorrugationProfile, choose_lambda, corrugate, gamma, gamma_array, step

UNIT = Domain.unit_square(0.25)
ZERO_W = (const(0.0), const(0.0))

# smooth test family
V = 0.1 * sin(2 * math.pi * X1) * cos(math.pi * X2)
W = (0.05 * X1 * X2, 0.02 * sin(math.pi * X1))
A = sqrt(0.5 + 0.2 * sin(2 * math.pi * X2) * X1)
ETA = (0.6, 0.8)


def test_gamma_examples():
    assert gamma(0.0, 0.37) == (0.0, -0.0, 0.0, -0.0)
    g1, g2, d1, d2 = gamma(1.0, 0.25)
    assert g1 == pytest.approx(1 / math.pi, abs=1e-15)
    assert g2 == pytest.approx(0.0, abs=1e-15)
    assert d1 == pytest.approx(0.0, abs=1e-15)
    assert d2 == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ParameterError):
        gamma(-0.1, 0.0)


def test_gamma_identity_sweep():
    rng = np.random.default_rng(3)
    t = rng.uniform(-10, 10, 1000)
    _, _, d1, d2 = gamma_array(np.full_like(t, 2.0), t)
    assert np.max(np.abs(0.5 * d1 ** 2 + d2 - 4.0)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0, 10), t=st.floats(-50, 50))
def test_gamma_properties(a, t):
    g = gamma(a, t)
    g_shift = gamma(a, t + 1.0)
    assert abs(0.5 * g[2] ** 2 + g[3] - a * a) <= 1e-12 * max(1.0, a * a)
    # 1-periodicity in t up to phase rounding of t + 1
    assert np.allclose(g, g_shift, rtol=0, atol=1e-12 * max(1.0, a * a) * max(1.0, abs(t)))
    assert abs(g[0]) + abs(g[2]) <= 3 * a + 1e-12
    assert abs(g[1]) + abs(g[3]) <= 3 * a * a + 1e-12


def test_profile_expressions_match_closed_form():
    prof = CorrugationProfile(A)
    phase = 7.0 * X1 + 3.0 * X2
    xs = np.linspace(0.1, 0.9, 5)
    X, Y = np.meshgrid(xs, xs)
    vals = [sample_grid([e], UNIT, 4)[0].ravel() for e in
            (prof.gamma1(phase), prof.gamma2(phase), prof.dt_gamma1(phase), prof.dt_gamma2(phase), A, phase)]
    ref = gamma_array(vals[4], vals[5])
    for got, want in zip(vals[:4], ref):
        assert np.allclose(got, want, atol=1e-14)


def test_zero_amplitude_step():
    out = step(V, W, const(0.0), ETA, 16.0, UNIT, resolution=50)
    assert out.v_new is V and out.w_new[0] is W[0] and out.w_new[1] is W[1]
    assert out.residual.value == 0.0


def test_flat_unit_corrugation():
    out = step(const(0.0), ZERO_W, const(1.0), (1.0, 0.0), 16.0, UNIT, resolution=200)
    vals = sample_grid([out.v_new, sin(32 * math.pi * X1) / (16 * math.pi)], UNIT, 50)
    assert np.max(np.abs(vals[0] - vals[1])) < 1e-15
    assert out.residual.value * 16 < 1e-12


def test_step_preconditions():
    with pytest.raises(ParameterError):
        step(V, W, A, ETA, 1.0, UNIT)
    with pytest.raises(ParameterError):
        step(V, W, A, ETA, 50.0, UNIT, l=0.01)
    with pytest.raises(ParameterError):
        step(V, W, X1 - 0.5, ETA, 8.0, UNIT)


def test_residual_first_order_decay():
    res = [step(V, W, A, ETA, 2.0 ** k, UNIT).residual.value for k in range(5, 9)]
    ratios = [b / a for a, b in zip(res, res[1:])]
    assert all(0.4 <= r <= 0.6 for r in ratios)
    scaled = [r * 2.0 ** k for r, k in zip(res, range(5, 9))]
    assert max(scaled) / min(scaled) < 1.05


def test_proximity_bounds_single_constant():
    a0 = norm_estimate(A, UNIT, "sup", 64).value
    gv = norm_estimate(V, UNIT, "C1", 64).value
    cv, cw = [], []
    for lam in (32.0, 64.0, 128.0):
        vn, wn = corrugate(V, W, A, ETA, lam)
        dv = norm_estimate(vn - V, UNIT, "sup", 6 * lam).value
        dw = max(norm_estimate(wn[i] - W[i], UNIT, "sup", 6 * lam).value for i in (0, 1))
        cv.append(dv * lam / a0)
        cw.append(dw * lam / (a0 * (a0 + gv)))
    assert max(cv) <= 1 / math.pi + 1e-9
    assert max(cw) / min(cw) < 1.5


def test_gradient_pointwise_bound():
    lam = 64.0
    vn, _ = corrugate(V, W, A, ETA, lam)
    d1, d2, a = sample_grid([vn.diff(0) - V.diff(0), vn.diff(1) - V.diff(1), A], UNIT, 6 * lam)
    grad_a = norm_estimate(A, UNIT, "C1", 64).value
    lhs = np.hypot(d1, d2)
    assert np.all(lhs <= 2 * a + grad_a / lam + 1e-12)


def test_higher_norm_growth():
    # amplitude with ||a||_m <= delta / l^m
    l, delta = 0.1, 0.05
    a = delta * (1.5 + 0.5 * sin(X1 / l))
    ratios = {0: [], 1: [], 2: []}
    for lam in (40.0, 80.0, 160.0):
        vn, _ = corrugate(V, W, a, ETA, lam)
        for m in ratios:
            val = norm_estimate(vn - V, UNIT, f"C{m}", 6 * lam).value
            ratios[m].append(val / (delta * lam ** (m - 1)))
    C = max(max(r) for r in ratios.values())
    assert C < 40
    for r in ratios.values():
        assert max(r) / min(r) < 1.5


def test_choose_lambda():
    out = choose_lambda(V, W, const(0.0), ETA, 1e-3, 5.0, UNIT)
    assert out.lam == 5.0 and out.residual.value == 0.0
    out = choose_lambda(const(0.0), ZERO_W, const(1.0), (1.0, 0.0), 1e-3, 2.0, UNIT)
    assert out.residual.value <= 1e-3 and out.lam <= 2 ** 24
    out = choose_lambda(V, W, A, ETA, 0.01, 2.0, UNIT)
    assert out.residual.value <= 0.01
    assert step(V, W, A, ETA, out.lam / 2, UNIT).residual.value > 0.01
    with pytest.raises(NonConvergenceError):
        choose_lambda(V, W, A, ETA, 0.0, 2.0, UNIT)
    with pytest.raises(NonConvergenceError) as err:
        choose_lambda(V, W, A, ETA, 1e-3, 2.0, UNIT, cap=64)
    assert err.value.last_residual > 1e-3


def test_step_record_is_json():
    out = step(V, W, A, ETA, 32.0, UNIT)
    rec = json.loads(out.to_json())
    assert rec["lambda"] == 32.0 and rec["residual"] == out.residual.value
