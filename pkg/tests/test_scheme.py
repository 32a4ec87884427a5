import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wforge.errors import ConfigError, InputError, ParameterError, PreconditionError
from wforge.field import X1, X2, Domain, SymField, const, evaluate_many, induced, sin
from wforge.scheme import (
    SchemeConfig, default_schedule, exponent_gate, poisson_dirichlet, run_c1, run_holder,
    s_admissible, solve_A0_from_f, trace_rows, write_run_log,
)

ZERO = const(0.0)


def test_gate_examples():
    ok, s = exponent_gate(0.1, 1.0)
    assert ok and 6 * 0.1 / 0.9 < s < 1
    assert exponent_gate(0.2, 1.0) == (False, None)
    assert exponent_gate(0.05, 0.08) == (False, None)
    assert exponent_gate(1 / 7, 1.0) == (False, None)
    assert exponent_gate(0.1, 1.5) == (False, None)


@settings(max_examples=200, deadline=None)
@given(alpha=st.floats(1e-4, 0.5), beta=st.floats(1e-3, 1.0))
def test_gate_substitution(alpha, beta):
    ok, s = exponent_gate(alpha, beta)
    assert ok == (alpha < min(1 / 7, beta / 2))
    if ok:
        assert 0 < s < min(1.0, 6 * beta / (2 - beta))
        assert alpha * (6 + s) - s < 0
        assert s_admissible(s, alpha, beta)


def test_config_validation():
    with pytest.raises(ConfigError, match="1/7"):
        SchemeConfig(alpha=0.2)
    with pytest.raises(ConfigError):
        SchemeConfig(s=0.5)
    with pytest.raises(ConfigError):
        SchemeConfig(sigma=1.0)
    with pytest.raises(ConfigError):
        SchemeConfig(epsilon_schedule=(0.5, 0.5))
    with pytest.raises(ConfigError):
        SchemeConfig(epsilon_schedule=())
    assert SchemeConfig().s == exponent_gate(0.1, 1.0)[1]
    assert sum(default_schedule()) == pytest.approx(0.08, rel=1e-2)


def test_poisson_single_mode_without_margin():
    dom = Domain.unit_square(0.0)
    lam = poisson_dirichlet(2 * math.pi ** 2 * sin(math.pi * X1) * sin(math.pi * X2), dom, 32)
    x = np.linspace(0, 1, 11)
    X, Y = np.meshgrid(x, x)
    (a,) = evaluate_many([lam], X.ravel(), Y.ravel())
    assert np.max(np.abs(a - np.sin(np.pi * X.ravel()) * np.sin(np.pi * Y.ravel()))) < 1e-12


def test_poisson_zero_source():
    dom = Domain.unit_square(0.25)
    A = solve_A0_from_f(ZERO, dom, c_extra=0.1)
    a11, a12, a22 = evaluate_many(list(A.entries), np.array([0.2, 0.7]), np.array([0.5, 0.1]))
    assert np.allclose(a11, 0.1) and np.allclose(a22, 0.1) and np.allclose(a12, 0.0)


def test_poisson_constant_source():
    dom = Domain.unit_square(0.25)
    lam = poisson_dirichlet(const(1.0), dom, 64)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(0, 1, 100), rng.uniform(0, 1, 100)
    lap = lam.diff(0).diff(0) + lam.diff(1).diff(1)
    (r,) = evaluate_many([lap], x, y)
    assert np.max(np.abs(r + 1.0)) < 1e-4


def test_poisson_rejects_nonfinite():
    # 1 / 0 poles are not expressible; a huge power overflows instead
    f = (1e200 * X1) * (1e200 * X1)
    with pytest.raises(InputError), np.errstate(over="ignore"):
        poisson_dirichlet(f, Domain.unit_square(0.25), 8)


def test_A0_shift_keeps_defect_positive():
    dom = Domain.unit_square(0.25)
    f = -5.0 * sin(math.pi * X1)
    A = solve_A0_from_f(f, dom, c_extra=0.05)
    x = np.linspace(0, 1, 33)
    X, Y = np.meshgrid(x, x)
    a11, _, _ = evaluate_many(list(A.entries), X.ravel(), Y.ravel())
    assert a11.min() >= 0.05 - 1e-12


def test_run_c1_indefinite():
    cfg = SchemeConfig(epsilon_schedule=(0.05,))
    A = SymField(const(0.1), ZERO, const(-0.1))
    with pytest.raises(PreconditionError) as info:
        run_c1(ZERO, (ZERO, ZERO), A, cfg)
    assert info.value.phase == "c1" and "[c1 stage 0]" in str(info.value)


def test_run_c1_already_below_target():
    cfg = SchemeConfig(epsilon_schedule=(0.05,))
    art = run_c1(ZERO, (ZERO, ZERO), SymField.identity(1e-4), cfg)
    assert art.defect_trace == [pytest.approx(1e-4)]
    assert art.records[0]["seed"] == 0


def _holder_input():
    v = 0.1 * sin(2 * math.pi * X1)
    return v, (ZERO, ZERO), induced(v, (ZERO, ZERO)) + SymField.identity(0.01)


def test_run_holder_rejections():
    v, w, A = _holder_input()
    with pytest.raises(ConfigError):
        run_holder(v, w, A, SchemeConfig(sigma=4.0, s=0.7))  # 4^0.7 < 4
    with pytest.raises(ParameterError):
        run_holder(v, w, A, SchemeConfig(delta0=0.005))
    with pytest.raises(ParameterError):
        run_holder(v, w, induced(v, w), SchemeConfig())


def test_run_log(tmp_path):
    recs = [{"phase": "c1", "stage": 0, "defect": 0.3},
            {"phase": "c1", "stage": 1, "defect_before": 0.3, "defect_after": 0.01},
            {"phase": "analysis", "max_residual": 1e-3}]
    assert trace_rows(recs) == [(0, "c1", 0, 0.3), (1, "c1", 1, 0.01)]
    paths = write_run_log(tmp_path / "new", recs)
    lines = paths["log"].read_text().splitlines()
    assert [json.loads(line) for line in lines] == recs
    assert paths["trace"].read_text() == "index,phase,stage,defect\n0,c1,0,0.3\n1,c1,1,0.01\n"
