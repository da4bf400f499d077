# tests/test_tuples.py

import numpy as np
import pytest

from core.errors import TupleConstraintError
from core.models import ALL_SETTINGS, S11, S21, S22, PerSetting
from core.tuples import (
    FunctionTuple,
    LinearEdgeWindowParams,
    combine,
    compression_tuple,
    conventional_window,
    eval_tuple,
    is_monotone_22,
    make_hard_window,
    make_linear_edge_window,
    make_primitive,
    mark_verified,
    max_value,
    verify_t4,
)


def test_linear_edge_window_shape(window_tuple):
    """Zero inside the dead zone, linear edges of slope m, saturating at 1."""
    assert eval_tuple(window_tuple, S21, 0.0) == 0.0
    assert eval_tuple(window_tuple, S21, 0.05) == 0.0
    assert eval_tuple(window_tuple, S21, 0.075) == pytest.approx(0.5)
    assert eval_tuple(window_tuple, S21, -0.075) == pytest.approx(0.5)
    assert eval_tuple(window_tuple, S21, 1.0) == 1.0
    # 22 dead zone is three times wider
    assert eval_tuple(window_tuple, S22, 0.15) == 0.0
    assert eval_tuple(window_tuple, S22, 0.175) == pytest.approx(0.5)


def test_eval_tuple_vectorizes(window_tuple):
    """Arrays are evaluated element-wise; scalars give floats."""
    x = np.array([-1.0, 0.0, 0.075])
    out = eval_tuple(window_tuple, S11, x)
    assert isinstance(out, np.ndarray)
    np.testing.assert_allclose(out, [1.0, 0.0, 0.5])
    assert isinstance(eval_tuple(window_tuple, S11, 0.0), float)


def test_linear_edge_window_rejects_non_exact_thresholds():
    """Thresholds whose 22 value is not the sum of the others are rejected."""
    params = LinearEdgeWindowParams(
        t_l=PerSetting.uniform(-0.1),
        t_h=PerSetting.uniform(0.1),
        m_l=10.0,
        m_h=10.0,
    )
    with pytest.raises(TupleConstraintError) as excinfo:
        make_linear_edge_window(params)
    assert excinfo.value.op == "linear_edge_window"


def test_linear_edge_window_rejects_bad_slope():
    """Slopes must be positive."""
    with pytest.raises(TupleConstraintError):
        make_linear_edge_window(LinearEdgeWindowParams.symmetric(0.1, 0.0))


@pytest.mark.parametrize(
    "f",
    [
        make_primitive("linear", lam=-2.0),
        make_primitive("constant", c=[0.1, 0.2, 0.3, 0.6]),
        make_primitive("step"),
        make_primitive("abs"),
        make_primitive("threshold", t=[0.1, 0.2, 0.3, 0.6]),
        make_primitive("half_linear", m=3.0, t=[0.0, 0.1, 0.1, 0.2], c=[0.0, 0.0, 0.5, 0.5]),
        make_linear_edge_window(LinearEdgeWindowParams.symmetric(0.05, 20.0)),
        make_hard_window([0.1, 0.2, 0.3, 0.6]),
        compression_tuple(2.0),
        combine("add", [make_primitive("abs"), make_primitive("step")]),
        combine("max", [make_primitive("abs"), make_primitive("threshold", t=[0.1, 0.1, 0.1, 0.3])]),
        combine("reflect", [make_primitive("step")]),
        combine("shift", [make_primitive("abs")], t=[0.1, -0.1, 0.2, 0.2]),
        combine("compose", [make_primitive("threshold", t=[0.1, 0.1, 0.1, 0.3]), make_primitive("abs")]),
    ],
)
def test_closure_members_pass_verify_t4(f):
    """Constructors and combinators produce tuples satisfying the closure inequality."""
    assert f.verified_t4
    check = verify_t4(f)
    assert check.passed, check.counterexample


def test_equal_width_window_fails_with_counterexample():
    """The conventional equal-width window is not a member; the check reports a counterexample."""
    check = verify_t4(conventional_window(0.1))
    assert not check.passed
    x, y, z = check.counterexample
    f = conventional_window(0.1)
    lhs = eval_tuple(f, S22, x + y + z)
    rhs = eval_tuple(f, ALL_SETTINGS[2], x) + eval_tuple(f, S11, y) + eval_tuple(f, ALL_SETTINGS[1], z)
    assert lhs > rhs


def test_mark_verified_raises_on_non_member():
    """mark_verified refuses tuples that fail the check."""
    with pytest.raises(TupleConstraintError):
        mark_verified(conventional_window(0.1), samples=1000)


def test_hard_window_requires_wide_22():
    """A 22 width below the sum of the other widths is rejected."""
    with pytest.raises(TupleConstraintError):
        make_hard_window([0.1, 0.1, 0.1, 0.1])


def test_combinator_preconditions():
    """Combinators validate their parameters and name themselves in the error."""
    with pytest.raises(TupleConstraintError) as excinfo:
        combine("scale", [make_primitive("abs")], factor=-1.0)
    assert excinfo.value.op == "scale"
    with pytest.raises(TupleConstraintError):
        combine("clamp", [make_primitive("linear", lam=1.0)], c=1.0)
    with pytest.raises(TupleConstraintError):
        combine("shift", [make_primitive("abs")], t=[0.1, 0.1, 0.1, 0.1])
    with pytest.raises(TupleConstraintError):
        # abs is not monotone at 22
        combine("compose", [make_primitive("abs"), make_primitive("step")])
    with pytest.raises(TupleConstraintError):
        combine("add", [make_primitive("abs")])
    with pytest.raises(TupleConstraintError):
        make_primitive("cosine")


def test_monotone_22_detection():
    """Threshold tuples are monotone at 22; abs is not."""
    assert is_monotone_22(make_primitive("threshold", t=[0.0, 0.0, 0.0, 0.0]))
    assert not is_monotone_22(make_primitive("abs"))


def test_tuple_serializes_round_trip(window_tuple):
    """Expression trees survive model_dump / model_validate."""
    f = combine("max", [window_tuple, compression_tuple(1.0)])
    rebuilt = FunctionTuple.model_validate(f.model_dump())
    x = np.linspace(-1.0, 1.0, 11)
    np.testing.assert_allclose(eval_tuple(rebuilt, S22, x), eval_tuple(f, S22, x))


def test_max_value_of_window_is_one(window_tuple):
    """Bounded tuples report their supremum."""
    assert max_value(window_tuple) == 1.0
    assert max_value(make_primitive("abs")) == float("inf")


GRID = np.linspace(-5.0, 5.0, 41)


@pytest.mark.parametrize(
    "combined, reference",
    [
        (
            combine("shift", [make_primitive("step")], t=[-1.0, -1.0, -1.0, -3.0]),
            make_primitive("threshold", t=[1.0, 1.0, 1.0, 3.0]),
        ),
        (combine("reflect", [make_primitive("abs")]), make_primitive("abs")),
        (
            combine("max", [make_primitive("linear", lam=1.0), combine("reflect", [make_primitive("linear", lam=1.0)])]),
            make_primitive("abs"),
        ),
    ],
)
def test_combinators_rebuild_primitives(combined, reference):
    """Shifted steps are thresholds, reflected abs is abs, and max(x, -x) is abs."""
    for ab in ALL_SETTINGS:
        np.testing.assert_array_equal(eval_tuple(combined, ab, GRID), eval_tuple(reference, ab, GRID))
    assert combined.verified_t4
