import json
import math

import numpy as np
import pytest

from wforge.errors import DecompositionError, ParameterError, PreconditionError
from wforge.field import X1, X2, Domain, SymField, const, defect_field, induced, sample_grid, sin
from wforge.stage import StageParams, pd_margin, stage_c1, stage_holder

UNIT = Domain.unit_square(0.25)
ZERO = const(0.0)
ZERO_W = (ZERO, ZERO)


def test_pd_margin_examples():
    assert pd_margin(SymField.of(2.0, 0.0, 3.0), UNIT, 16) == pytest.approx(2.0)
    assert pd_margin(SymField.of(0.0, 0.0, 0.0), UNIT, 16) == 0.0
    s = 0.5 * sin(2 * math.pi * X1)
    D = SymField.of(1.0 + s, 0.0, 1.0 - s)
    # the lattice at resolution 64 hits x1 = 1/4 exactly
    assert pd_margin(D, UNIT, 64) == pytest.approx(0.5, abs=1e-12)


@pytest.fixture(scope="module")
def c1_run():
    return stage_c1(ZERO, ZERO_W, SymField.identity(0.4), StageParams(epsilon=0.05))


def test_stage_c1_constant_identity(c1_run):
    v, w, rep = c1_run
    assert rep.n_terms == 3 and len(rep.lambdas) == 3
    assert rep.defect_before.value == pytest.approx(0.4)
    assert rep.defect_after.value < 0.05
    assert rep.c1_margin > 0
    # same lattice as the report
    D = defect_field(v, w, SymField.identity(0.4))
    e11, e12, e22 = sample_grid(D.entries, UNIT, rep.defect_after.sample_resolution)
    tr, disc = 0.5 * (e11 + e22), np.hypot(0.5 * (e11 - e22), e12)
    assert float(np.max(np.abs(tr) + disc)) == pytest.approx(rep.defect_after.value, rel=1e-12)
    assert rep.v_drift + rep.w_drift < 0.05
    assert all(r <= b for r, b in zip(rep.step_residuals, rep.budgets))
    rec = json.loads(rep.to_json())
    assert rec["kind"] == "c1" and rec["lambdas"] == rep.lambdas


def test_stage_c1_epsilon_above_defect():
    c = 0.04
    _, _, rep = stage_c1(ZERO, ZERO_W, SymField.identity(c), StageParams(epsilon=0.1))
    assert rep.delta == 0.5
    assert rep.defect_after.value < 0.1 and rep.c1_margin > 0


def test_stage_c1_indefinite():
    with pytest.raises(DecompositionError):
        stage_c1(ZERO, ZERO_W, SymField.of(1.0, 0.0, X1 - 0.5), StageParams(epsilon=0.05))
    assert issubclass(DecompositionError, PreconditionError)


def test_gradient_step_size_law():
    # with epsilon proportional to the defect the problem is scale invariant,
    # so one constant must fit all magnitudes
    ratios = []
    for c in (0.4, 0.1, 0.025):
        _, _, rep = stage_c1(ZERO, ZERO_W, SymField.identity(c), StageParams(epsilon=c / 2))
        ratios.append(rep.grad_increment / math.sqrt(rep.defect_before.value))
    assert max(ratios) / min(ratios) < 1.05
    # pointwise bound 2 a per step summed over the three terms
    assert max(ratios) < 2 * sum(math.sqrt(p) for p in (0.75, 0.75, 0.5)) * 1.05


HV = 0.1 * sin(2 * math.pi * X1)


def _holder_input():
    return HV, ZERO_W, induced(HV, ZERO_W) + SymField.identity(0.01)


@pytest.fixture(scope="module")
def holder_runs():
    v, w, A = _holder_input()
    out = {}
    for sigma in (4.0, 8.0):
        out[sigma] = stage_holder(v, w, A, StageParams(M=10.0, sigma=sigma))
    return out


def test_stage_holder_schedule(holder_runs):
    _, _, rep = holder_runs[4.0]
    assert rep.l == pytest.approx(0.01, rel=1e-9)
    assert rep.lambdas == pytest.approx([400.0, 1600.0, 6400.0], rel=1e-9)
    assert rep.n_terms == 3 and len(rep.step_residuals) == 3
    assert rep.deltas == sorted(rep.deltas)


def test_stage_holder_sigma_doubling(holder_runs):
    assert holder_runs[8.0][2].defect_after.value < holder_runs[4.0][2].defect_after.value


def test_stage_holder_defect_ratio(holder_runs):
    _, _, rep = holder_runs[4.0]
    assert rep.defect_after.value / rep.defect_before.value < 1


def test_shift_bookkeeping(holder_runs):
    _, _, rep = holder_runs[4.0]
    s = rep.shift
    lin = (-s * X1, -s * X2)
    S = induced(ZERO, lin)
    e11, e12, e22 = sample_grid(S.entries, UNIT, 8)
    assert np.all(e11 == -s) and np.all(e22 == -s) and np.all(e12 == 0)


def test_stage_holder_preconditions():
    v, w, _ = _holder_input()
    with pytest.raises(ParameterError):
        stage_holder(v, w, induced(v, w), StageParams(M=10.0, sigma=4.0))
    with pytest.raises(ParameterError):
        stage_holder(v, w, induced(v, w) + SymField.identity(0.2), StageParams(M=10.0, sigma=4.0))
    with pytest.raises(ParameterError):
        stage_holder(v, w, induced(v, w) + SymField.identity(0.01), StageParams(M=1.0, sigma=4.0))
    with pytest.raises(ParameterError):
        StageParams(M=10.0, sigma=1.0)
