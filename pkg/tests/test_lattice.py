"""Walk kernels, truncated Green fields, and decay estimates."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brwlab.errors import DomainError, ResourceLimitError
from brwlab.lattice import (
    LatticeField,
    bubble_sum,
    delta_field,
    graph_weight,
    green_limit,
    green_value,
    heat_kernel,
    single_step_convolve,
    truncated_green,
)

from oracles import (
    binomial_kernel_1d,
    green_bessel_mp,
    srw_green_truncated,
    srw_pmf,
    watson_d3_green,
)


def test_single_step_from_delta_1d():
    out = single_step_convolve(delta_field(1))
    assert out.value_at((1,)) == pytest.approx(0.5)
    assert out.value_at((-1,)) == pytest.approx(0.5)
    assert out.value_at((0,)) == 0.0


def test_single_step_from_delta_2d():
    out = single_step_convolve(delta_field(2))
    for x in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        assert out.value_at(x) == pytest.approx(0.25)
    assert out.total_mass() == pytest.approx(1.0, abs=1e-15)


def test_two_steps_return_probability_1d():
    out = single_step_convolve(single_step_convolve(delta_field(1)))
    assert out.value_at((0,)) == pytest.approx(0.5)
    assert out.value_at((2,)) == pytest.approx(0.25)


def test_heat_kernel_hand_values():
    assert heat_kernel(1, 1).value_at((1,)) == pytest.approx(0.5)
    assert heat_kernel(2, 1).value_at((1, 0)) == pytest.approx(0.25)
    assert heat_kernel(3, 2).origin_value() == pytest.approx(1.0 / 6.0)
    assert heat_kernel(1, 4).origin_value() == pytest.approx(6.0 / 16.0)


@pytest.mark.parametrize("dim,n", [(1, 9), (2, 7), (3, 6)])
def test_heat_kernel_matches_dict_dp(dim, n):
    field = heat_kernel(dim, n)
    oracle = srw_pmf(dim, n)
    for x, p in oracle.items():
        assert field.value_at(x) == pytest.approx(float(p), abs=1e-14)
    # and nothing outside the oracle support
    assert field.total_mass() == pytest.approx(float(sum(oracle.values())), abs=1e-13)


def test_heat_kernel_1d_binomial_closed_form():
    field = heat_kernel(1, 12)
    for x in range(-12, 13):
        assert field.value_at((x,)) == pytest.approx(
            float(binomial_kernel_1d(12, x)), abs=1e-15
        )


@given(
    dim=st.integers(min_value=1, max_value=3),
    n=st.integers(min_value=0, max_value=12),
)
@settings(max_examples=25, deadline=None)
def test_heat_kernel_is_probability(dim, n):
    field = heat_kernel(dim, n)
    assert field.is_probability()
    assert field.total_mass() == pytest.approx(1.0, abs=1e-12)


def test_heat_kernel_parity_zeros():
    field = heat_kernel(2, 5)
    for x in ((0, 0), (1, 1), (2, 0)):
        assert field.value_at(x) == 0.0
    field = heat_kernel(1, 6)
    assert field.value_at((3,)) == 0.0


def test_heat_kernel_hyperoctahedral_symmetry():
    # equal up to summation order in the convolution (one ulp)
    field = heat_kernel(3, 8)
    base = field.value_at((2, 1, 3))
    for perm in itertools.permutations((2, 1, 3)):
        for signs in itertools.product((1, -1), repeat=3):
            image = tuple(s * c for s, c in zip(signs, perm))
            assert field.value_at(image) == pytest.approx(base, rel=1e-13)


def test_heat_kernel_box_guard():
    with pytest.raises(ResourceLimitError):
        heat_kernel(4, 64)  # 129^4 cells exceed the field guard


def test_truncated_green_hand_values_1d():
    g2 = truncated_green(1, 2)
    assert g2.origin_value() == pytest.approx(0.5)
    assert g2.value_at((1,)) == pytest.approx(0.5)
    assert g2.value_at((-2,)) == pytest.approx(0.25)
    g1 = truncated_green(1, 1)
    assert g1.origin_value() == 0.0
    assert g1.value_at((1,)) == pytest.approx(0.5)


@pytest.mark.parametrize("dim,n", [(1, 10), (2, 8), (3, 6)])
def test_truncated_green_matches_dict_dp(dim, n):
    field = truncated_green(dim, n)
    oracle = srw_green_truncated(dim, n)
    for x, v in oracle.items():
        assert field.value_at(x) == pytest.approx(float(v), abs=1e-13)


def test_truncated_green_monotone_in_n():
    prev = truncated_green(3, 2)
    for n in (4, 8, 16):
        cur = truncated_green(3, n)
        for x in ((0, 0, 0), (1, 0, 0), (2, 1, 1)):
            assert cur.value_at(x) >= prev.value_at(x) - 1e-15
        prev = cur


def test_truncated_green_rejects_n_zero():
    with pytest.raises(DomainError):
        truncated_green(2, 0)


def test_green_value_matches_bessel_oracle():
    assert green_value(3, (0, 0, 0), tol=1e-8) == pytest.approx(
        green_bessel_mp(3, (0, 0, 0)), abs=1e-7
    )
    assert green_value(3, (2, 1, 0), tol=1e-8) == pytest.approx(
        green_bessel_mp(3, (2, 1, 0)), abs=1e-7
    )
    assert green_value(5, (0,) * 5, tol=1e-8) == pytest.approx(
        green_bessel_mp(5, (0,) * 5), abs=1e-7
    )
    assert green_value(5, (2, 0, 0, 0, 0), tol=1e-8) == pytest.approx(
        green_bessel_mp(5, (2, 0, 0, 0, 0)), abs=1e-7
    )


def test_green_value_watson_closed_form():
    # Bessel-free anchor for the d=3 on-diagonal value
    assert green_value(3, (0, 0, 0), tol=1e-10) == pytest.approx(
        watson_d3_green(), abs=1e-9
    )


def test_green_value_harmonic_at_origin():
    # G(0) - 1 equals the neighbor average, i.e. G(e1) by symmetry
    g0 = green_value(3, (0, 0, 0), tol=1e-10)
    g1 = green_value(3, (1, 0, 0), tol=1e-10)
    assert g0 - 1.0 == pytest.approx(g1, abs=1e-8)


def test_green_value_recurrent_dimensions_rejected():
    with pytest.raises(DomainError):
        green_value(2, (0, 0))
    with pytest.raises(DomainError):
        green_value(1, (5,))


def test_green_value_dimension_mismatch():
    with pytest.raises(DomainError):
        green_value(3, (1, 0))


def test_truncated_green_increases_to_green_value():
    x = (1, 1, 0)
    limit = green_value(3, x, tol=1e-10)
    prev = -1.0
    for n in (8, 32, 128):
        v = truncated_green(3, n).value_at(x)
        assert prev <= v <= limit + 1e-12
        prev = v
    assert limit - prev < 0.08  # n = 128 remainder is O(n^{-1/2})


def test_green_limit_field_agrees_with_point_values():
    # the field carries the n >= 1 sum, so the origin drops the delta
    field, err = green_limit(3, radius=3, tol=1e-6)
    assert err <= 1e-6
    for x in ((0, 0, 0), (1, 0, 0), (2, 1, 0), (3, 0, 0)):
        expected = green_value(3, x, tol=1e-8) - (1.0 if not any(x) else 0.0)
        assert field.value_at(x) == pytest.approx(expected, abs=5e-6)


def test_green_limit_recurrent_rejected():
    with pytest.raises(DomainError):
        green_limit(2, radius=4)


def test_d3_green_decay_window():
    # G(0,x) * <x> stays in a fixed window for 2 <= |x|_1 <= 10
    pts = [
        (2, 0, 0), (3, 0, 0), (5, 0, 0), (8, 0, 0), (10, 0, 0),
        (1, 1, 0), (2, 2, 0), (2, 2, 2), (3, 3, 3), (4, 3, 2),
    ]
    for x in pts:
        product = green_value(3, x, tol=1e-6) * float(graph_weight(np.array(x)))
        assert 0.45 <= product <= 0.90


def test_local_clt_on_diagonal():
    # n^{d/2} (p_n + p_{n+1})(0,0) approaches 2 (d / 2 pi)^{d/2} from below
    for dim in (1, 2, 3):
        limit = 2.0 * (dim / (2.0 * math.pi)) ** (dim / 2.0)
        prev = 0.0
        for n in (8, 16, 32, 64, 128, 256, 512, 1024):
            if (2 * (n + 1) + 1) ** dim > 2**27:
                break
            val = n ** (dim / 2.0) * (
                heat_kernel(dim, n).origin_value()
                + heat_kernel(dim, n + 1).origin_value()
            )
            assert 0.90 * limit <= val <= 1.01 * limit
            assert val >= prev - 1e-12
            prev = val


# Windows calibrated from the kernel itself (the prefactor and the
# exponential rate both drift with dimension against the fixed
# n^{-d/2} exp(-|x|^2/n) reference); box guard limits the reachable
# (dim, n) pairs above three dimensions.
GAUSSIAN_WINDOWS = {
    (1, 16): (0.70, 6.5), (1, 64): (0.70, 6.5), (1, 256): (0.70, 6.5),
    (2, 16): (0.55, 1.3), (2, 64): (0.55, 1.3), (2, 256): (0.55, 1.3),
    (3, 16): (0.06, 0.70), (3, 64): (0.06, 0.70),
    (4, 16): (0.002, 0.85),
    (5, 16): (3e-4, 1.2),
}


@pytest.mark.parametrize("dim,n", sorted(GAUSSIAN_WINDOWS), ids=str)
def test_gaussian_window(dim, n):
    lo, hi = GAUSSIAN_WINDOWS[(dim, n)]
    k1, k2 = heat_kernel(dim, n), heat_kernel(dim, n + 1)
    lim = int(2 * math.sqrt(n))
    checked = 0
    for x in itertools.product(range(lim + 1), repeat=dim):
        r2 = sum(c * c for c in x)
        if r2 > 4 * n:
            continue
        ratio = (k1.value_at(x) + k2.value_at(x)) / (n ** (-dim / 2.0) * math.exp(-r2 / n))
        assert lo <= ratio <= hi, (x, ratio)
        checked += 1
    assert checked > 0


def test_bubble_sum_positive_lower_bound():
    assert bubble_sum(5, (0, 0, 0, 0, 0), box_radius=8) >= 2.0**-9


def test_graph_weight_floor_and_norm():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [2, 3, 4]])
    assert graph_weight(pts).tolist() == [2.0, 2.0, 2.0, 9.0]


def test_field_bytes_roundtrip():
    field = heat_kernel(2, 6)
    clone = LatticeField.from_bytes(field.to_bytes())
    assert clone.dim == field.dim and clone.radius == field.radius
    assert np.array_equal(clone.values, field.values)


def test_field_save_load_roundtrip(tmp_path):
    field = truncated_green(3, 4)
    path = tmp_path / "field.bin"
    field.save(path)
    clone = LatticeField.load(path)
    assert np.array_equal(clone.values, field.values)
    assert clone.dim == 3


def test_field_csv_dump(tmp_path):
    field = heat_kernel(1, 2)
    path = tmp_path / "field.csv"
    field.to_csv(path)
    rows = [r for r in path.read_text().splitlines() if r and not r.startswith("#")]
    header, data = rows[0], rows[1:]
    assert header.split(",")[0] == "x1"
    parsed = {int(r.split(",")[0]): float(r.split(",")[-1]) for r in data}
    assert parsed[0] == pytest.approx(0.5)
    assert parsed[2] == pytest.approx(0.25)


def test_field_rejects_corrupt_bytes():
    field = heat_kernel(1, 2)
    blob = field.to_bytes()
    with pytest.raises(Exception):
        LatticeField.from_bytes(blob[: len(blob) // 2])
