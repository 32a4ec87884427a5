import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from wforge.errors import DomainError, FormatError, InsufficientExtensionError, UnsupportedOrderError
from wforge.field import (
    Domain, X1, X2, commutator_gap, const, cos, differentiate, evaluate, evaluate_many,
    exp, extend, mollifier_constant, mollify, norm_estimate, power, read_grid, sin, sqrt,
    write_grid, write_grid_csv,
)
from wforge.field.expr import SineSeries, bump
from wforge.field.domain import Rect

UNIT = Domain.unit_square(0.25)


def _radial_moment(p):
    # independent polar quadrature of int |z|^p phi(z) dz
    c = mollifier_constant()
    val, _ = integrate.quad(lambda r: c * math.exp(-1.0 / (1.0 - r * r)) * r ** (p + 1),
                            0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    return 2 * math.pi * val


def test_mollifier_unit_mass():
    assert abs(_radial_moment(0) - 1.0) < 1e-12


def test_evaluate_examples():
    assert evaluate(extend(X1 * X1, Domain((0, 0), (4, 4), 0.5)), (3, 0)) == 9.0
    f = sin(2 * math.pi * X1)
    assert evaluate(f, (0.25, 0.7)) == pytest.approx(1.0, abs=1e-15)
    m = mollify(const(5.0), 0.1, domain=UNIT)
    assert evaluate(m, (0.5, 0.5)) == 5.0


def test_evaluate_outside_region():
    f = extend(X1 * X1, UNIT)
    assert evaluate(f, (1.1, 0.0)) == pytest.approx(1.21)
    with pytest.raises(DomainError):
        evaluate(f, (1.3, 0.0))


def test_differentiate_examples():
    d = differentiate(X1 * X1, (1, 0))
    assert evaluate(d, (2.0, 0.3)) == 4.0
    assert evaluate(differentiate(X1 * X2, (1, 1)), (0.3, 0.8)) == 1.0
    with pytest.raises(UnsupportedOrderError):
        differentiate(sin(X1), (2, 2))


def test_mollified_derivative_matches_fd():
    m = mollify(X1, 0.1, domain=UNIT)
    h = 1e-5
    fd = (evaluate(m, (0.5 + h, 0.5)) - evaluate(m, (0.5 - h, 0.5))) / (2 * h)
    assert abs(evaluate(m.diff(0), (0.5, 0.5)) - 1.0) < 1e-10
    assert abs(fd - 1.0) < 1e-9


def test_mollify_affine_is_identity():
    f = 0.3 + 2.0 * X1 - 1.5 * X2
    m = mollify(f, 0.2, domain=UNIT)
    xs = np.linspace(0, 1, 7)
    X, Y = np.meshgrid(xs, xs)
    a, b = evaluate_many([m, f], X.ravel(), Y.ravel())
    assert np.max(np.abs(a - b)) < 1e-13


def test_mollify_needs_margin():
    with pytest.raises(InsufficientExtensionError):
        mollify(X1, 0.3, domain=UNIT)
    with pytest.raises(ValueError):
        mollify(X1, 1.5)


def test_norm_examples():
    assert norm_estimate(const(3.0), UNIT, "sup", 8).value == 3.0
    assert abs(norm_estimate(X1, UNIT, "holder", 16, alpha=1.0).value - 1.0) < 1e-9
    f = sin(2 * math.pi * 64 * X1)
    assert norm_estimate(f, UNIT, "sup", 4 * 64).value >= 0.999
    ext = Domain((0, 0), (1, 1), 0.2)
    assert norm_estimate(X1 * X1, ext.extended, "sup", 20).value == pytest.approx(1.44)
    assert norm_estimate(X1 * X1, ext, "sup", 20).value == pytest.approx(1.0)


def test_cm_norm_sums_orders():
    # x1^2: sup 1, first derivatives max 2, second derivatives max 2
    assert norm_estimate(X1 * X1, UNIT, "C2", 16).value == pytest.approx(5.0)


def test_commutator_examples():
    assert commutator_gap(const(2.0), X1 * X2, 0.1, domain=UNIT, resolution=8) < 1e-14
    # (x1^2) * phi_l - (x1 * phi_l)^2 = l^2 int z1^2 phi = l^2 m2 / 2
    # the masked tensor rule resolves the moment to ~5e-5 relative; the
    # scaling in l is exact because the nodes scale with l
    m2 = _radial_moment(2)
    scaled = [commutator_gap(X1, X1, l, domain=UNIT, resolution=8) / (l * l) for l in (0.2, 0.1, 0.05)]
    assert max(scaled) - min(scaled) < 1e-12
    assert scaled[0] == pytest.approx(0.5 * m2, rel=1e-4)


def test_grid_roundtrip(tmp_path):
    vals = np.arange(12, dtype=float).reshape(3, 4) / 7.0
    p = write_grid(tmp_path / "g.wfg", vals, (0.0, 1.0), (-0.5, 0.5))
    g = read_grid(p)
    assert np.array_equal(g.values, vals)
    assert g.x_range == (0.0, 1.0) and g.y_range == (-0.5, 0.5)
    assert p.stat().st_size == 32 + 12 * 8
    write_grid_csv(tmp_path / "g.csv", vals, (0.0, 1.0), (-0.5, 0.5))
    rows = (tmp_path / "g.csv").read_text().splitlines()
    assert rows[0] == "x,y,value" and len(rows) == 13


def test_grid_truncated(tmp_path):
    p = write_grid(tmp_path / "g.wfg", np.zeros((4, 4)), (0.0, 1.0), (0.0, 1.0))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError, match="nx"):
        read_grid(p)
    p.write_bytes(b"WFG1\x00")
    with pytest.raises(FormatError, match="header"):
        read_grid(p)
    p.write_bytes(b"XXXX" + bytes(28))
    with pytest.raises(FormatError, match="magic"):
        read_grid(p)


# -- properties ---------------------------------------------------------------

_series = SineSeries(np.array([[1.0, -0.3], [0.2, 0.5]]), Rect(-0.25, -0.25, 1.25, 1.25))
NODE_FAMILY = {
    "poly": X1 * X1 * X2 + 3.0 * X2,
    "trig": sin(3.0 * X1 + X2) * cos(2.0 * X2),
    "exp": exp(0.5 * X1 - X2),
    "pow": power(2.0 + X1 * X2, 1.5),
    "sqrt": sqrt(1.5 + sin(X1)),
    "bump": bump((X1 - 0.5) * (X1 - 0.5) + (X2 - 0.5) * (X2 - 0.5), 1.0),
    "series": _series,
    "mollified": mollify(sin(4.0 * X1) * X2, 0.1, domain=UNIT),
}

_pt = st.floats(0.05, 0.95)


@pytest.mark.parametrize("name", sorted(NODE_FAMILY))
@settings(max_examples=100, deadline=None)
@given(x=_pt, y=_pt, axis=st.sampled_from([0, 1]))
def test_derivative_matches_central_difference(name, x, y, axis):
    f = NODE_FAMILY[name]
    h = 1e-5
    dx, dy = (h, 0.0) if axis == 0 else (0.0, h)
    vals = evaluate_many([f.diff(axis), f], np.array([x, x + dx, x - dx]), np.array([y, y + dy, y - dy]))
    exact = vals[0][0]
    fd = (vals[1][1] - vals[1][2]) / (2 * h)
    assert abs(exact - fd) <= 1e-6 * max(1.0, abs(exact))


@settings(max_examples=25, deadline=None)
@given(k=st.floats(0.5, 20.0), phase=st.floats(0, 6.3), r=st.integers(4, 40))
def test_norm_monotone_under_refinement(k, phase, r):
    f = sin(k * X1 + phase) * cos(0.7 * k * X2)
    coarse = norm_estimate(f, UNIT, "sup", r).value
    fine = norm_estimate(f, UNIT, "sup", 2 * r).value
    assert fine >= coarse
    hc = norm_estimate(f, UNIT, "holder", r, alpha=0.5).value
    hf = norm_estimate(f, UNIT, "holder", 2 * r, alpha=0.5).value
    assert hf >= hc


@settings(max_examples=30, deadline=None)
@given(x=_pt, y=_pt)
def test_evaluation_is_pure(x, y):
    f = NODE_FAMILY["mollified"] + NODE_FAMILY["trig"]
    a = evaluate(f, (x, y))
    b = evaluate(f, (x, y))
    assert a == b


def test_mollification_bounds_single_constant():
    # ||f*phi_l - f||_0 <= C l ||f||_{0,1}
    f = sin(2 * math.pi * X1) * cos(math.pi * X2)
    lip = norm_estimate(f, UNIT, "holder", 64, alpha=1.0).value
    ratios = []
    for l in (0.2, 0.1, 0.05):
        err = norm_estimate(mollify(f, l, domain=UNIT) - f, UNIT, "sup", 64).value
        ratios.append(err / (l * lip))
    C = max(ratios)
    assert C < 1.0 and all(r <= C for r in ratios)
    # ||f*phi_l||_2 <= C l^-1 ||f||_1, the l = 0.2 ratio bounds the rest
    c1 = norm_estimate(f, UNIT, "C1", 32).value
    ratios = [norm_estimate(mollify(f, l, domain=UNIT), UNIT, "C2", 32).value * l / c1
              for l in (0.2, 0.1, 0.05)]
    assert ratios[0] == max(ratios)
