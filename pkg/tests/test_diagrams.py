"""Diagram evaluation: truncated values, limits, and maximal fields."""

import math

import numpy as np
import pytest

from brwlab.errors import DivergenceError, DomainError, ResourceLimitError
from brwlab.diagrams import (
    check_recursion,
    doubling_limit,
    evaluate_limit,
    evaluate_truncated,
    maximal_diagram_field,
    noninjective_reduction_check,
)
from brwlab.lattice import delta_field, green_value, truncated_green
from brwlab.skeletons import Skeleton, enumerate_injective_skeletons, enumerate_skeletons
from brwlab.validate import brute_diagram

CHERRY = Skeleton.parse("2|1,2,0,0|0,2,3")
PATH_1 = Skeleton.parse("1|1,0|0,1")
POINT_0 = Skeleton.parse("0|0|0")


def test_zero_skeleton_is_one():
    for dim in (1, 2, 3):
        for n in (2, 3, 4):
            out = evaluate_truncated(POINT_0, ((0,) * dim,), n, dim)
            assert out.value == 1.0
            assert not out.empty


def test_one_skeleton_is_truncated_green():
    for dim, n in ((1, 4), (2, 3)):
        field = truncated_green(dim, n)
        for x in ((0,) * dim, (1,) + (0,) * (dim - 1), (2,) + (0,) * (dim - 1)):
            out = evaluate_truncated(PATH_1, ((0,) * dim, x), n, dim)
            assert out.value == pytest.approx(field.value_at(x), abs=1e-14)


def test_one_skeleton_translation_invariance():
    shift = (3,)
    for x in ((0,), (1,), (-2,)):
        moved = tuple(c + 3 for c in x)
        a = evaluate_truncated(PATH_1, ((0,), x), 4, 1).value
        b = evaluate_truncated(PATH_1, (shift, moved), 4, 1).value
        assert a == pytest.approx(b, abs=1e-15)


def test_cherry_hand_value():
    out = evaluate_truncated(CHERRY, ((0,), (0,), (0,)), 2, 1)
    assert out.value == pytest.approx(13.0 / 32.0, abs=1e-15)


@pytest.mark.parametrize("k", range(4))
def test_matches_brute_force(k):
    skels = enumerate_skeletons(k)[:6]
    for dim, n in ((1, 3), (2, 2)):
        zero = (0,) * dim
        probe = (1,) + (0,) * (dim - 1)
        for skel in skels:
            pins = tuple(zero if j % 2 == 0 else probe for j in range(k + 1))
            got = evaluate_truncated(skel, pins, n, dim).value
            want = brute_diagram(skel, pins, n, dim)
            assert got == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_value_monotone_in_truncation():
    prev = 0.0
    for n in (2, 4, 8, 16):
        cur = evaluate_truncated(CHERRY, ((0,), (1,), (-1,)), n, 1).value
        assert cur >= prev - 1e-15
        prev = cur


def test_support_is_exact():
    n = 5
    assert evaluate_truncated(PATH_1, ((0,), (n,)), n, 1).value == pytest.approx(2.0**-n)
    assert evaluate_truncated(PATH_1, ((0,), (n + 1,)), n, 1).value == 0.0


def test_coincident_labels_must_agree():
    both_on_root = Skeleton.parse("1|0|0,0")
    ok = evaluate_truncated(both_on_root, ((2,), (2,)), 3, 1)
    assert ok.value == 1.0 and not ok.empty
    clash = evaluate_truncated(both_on_root, ((2,), (3,)), 3, 1)
    assert clash.value == 0.0 and clash.empty


def test_maximal_field_small_orders():
    assert np.array_equal(maximal_diagram_field(0, 3, 2).values, delta_field(2).values)
    m1 = maximal_diagram_field(1, 4, 1)
    g = truncated_green(1, 4)
    for x in range(-4, 5):
        assert m1.value_at((x,)) == pytest.approx(g.value_at((x,)), abs=1e-15)


def test_maximal_field_is_skeleton_max():
    field = maximal_diagram_field(2, 2, 1)
    for x in ((0,), (1,), (2,), (3,)):
        direct = max(
            evaluate_truncated(s, (x, (0,), (0,)), 2, 1).value
            for s in enumerate_injective_skeletons(2)
        )
        assert field.value_at(x) == pytest.approx(direct, abs=1e-15)


def test_maximal_field_slot_invariance():
    field = maximal_diagram_field(2, 2, 1)
    for x in ((0,), (1,), (2,)):
        moved = max(
            evaluate_truncated(s, ((0,), x, (0,)), 2, 1).value
            for s in enumerate_injective_skeletons(2)
        )
        assert field.value_at(x) == pytest.approx(moved, abs=1e-14)


def test_recursion_inequality_smoke():
    report = check_recursion(2, 4, 2)
    assert report.passed
    assert report.points_checked > 0
    assert report.min_slack >= 0.0


def test_noninjective_reduction_smoke():
    report = noninjective_reduction_check(2, 3, 1)
    assert report.passed
    assert report.worst_relative <= 1.0


def test_doubling_limit_geometric_series():
    value, bound, n_used = doubling_limit(lambda n: 1.0 - 1.0 / n, tol=1e-3)
    assert abs(value - 1.0) <= max(bound, 1.5 / n_used)
    assert 1.0 - value <= bound + 1e-12  # bound covers the true remainder
    assert n_used >= 512


def test_doubling_limit_flags_divergence():
    with pytest.raises(DivergenceError):
        doubling_limit(lambda n: math.log(n), tol=1e-9)


def test_doubling_limit_runs_out_of_doublings():
    with pytest.raises(ResourceLimitError):
        doubling_limit(lambda n: 1.0 - 1.0 / n, tol=1e-12, max_doublings=6)


def test_doubling_limit_reports_partial_value_on_box_guard():
    def step(n):
        if n > 16:
            raise ResourceLimitError("synthetic box guard")
        return 1.0 - 1.0 / n

    with pytest.raises(ResourceLimitError, match="0.9375"):
        doubling_limit(step, tol=1e-9)


def test_limit_rejects_recurrent_dimensions():
    with pytest.raises(DomainError):
        evaluate_limit(PATH_1, ((0, 0), (1, 0)), dim=2)


def test_limit_divergent_orders_need_opt_in():
    pins = ((0, 0, 0), (0, 0, 0), (0, 0, 0))
    with pytest.raises(DomainError):
        evaluate_limit(CHERRY, pins, dim=3, tol=1e-2)
    with pytest.raises(DivergenceError):
        evaluate_limit(CHERRY, pins, dim=3, tol=1e-2, assert_convergent=True)


def test_limit_matches_green_function_with_honest_bound():
    x = (2, 0, 0, 0, 0)
    out = evaluate_limit(PATH_1, ((0,) * 5, x), dim=5, tol=5e-3)
    truth = green_value(5, x, tol=1e-8)
    assert abs(out.value - truth) <= out.truncation_error_bound
    assert out.n_used >= 8


def test_limit_box_guard_reports_partial():
    x = (2, 0, 0, 0, 0)
    with pytest.raises(ResourceLimitError, match="box guard"):
        evaluate_limit(PATH_1, ((0,) * 5, x), dim=5, tol=1e-6)


def test_memo_reuse_is_consistent():
    memo = {}
    a = evaluate_truncated(CHERRY, ((0,), (1,), (-1,)), 4, 1, _memo=memo).value
    b = evaluate_truncated(CHERRY, ((0,), (1,), (-1,)), 4, 1, _memo=memo).value
    c = evaluate_truncated(CHERRY, ((0,), (1,), (-1,)), 4, 1).value
    assert a == b == c
