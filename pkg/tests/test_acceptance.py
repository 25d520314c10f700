"""End-to-end acceptance run: every validation criterion at full strength.

Each test runs one criterion from brwlab.validate, records its one-line
verdict (replayed in the terminal summary by conftest), and asserts it
passed.  The slow Monte Carlo criteria dominate the suite's runtime;
run this module alone with `pytest tests/test_acceptance.py -v`.
"""

import pytest

from brwlab import validate


def _record(acceptance_lines, res):
    line = res.line()
    acceptance_lines.append(line)
    print(line)
    assert res.passed, res.detail


@pytest.fixture(scope="module")
def d5_sweep():
    # one shared d=5 reference sweep; it feeds both the moment-equality
    # and the tail-shape criteria, exactly as run_all("full") does
    return validate.d5_reference_sweep()


def test_skeleton_combinatorics_exact(acceptance_lines):
    _record(acceptance_lines, validate.check_combinatorics())


def test_diagrams_match_brute_force(acceptance_lines):
    _record(acceptance_lines, validate.check_diagram_brute_force())


def test_recursion_inequality_grid(acceptance_lines):
    _record(acceptance_lines, validate.check_recursion_grid())


def test_first_moment_matches_monte_carlo(acceptance_lines):
    _record(acceptance_lines, validate.check_first_moment_identity())


def test_high_dim_moments_match_monte_carlo(acceptance_lines, d5_sweep):
    _record(acceptance_lines, validate.check_high_dim_equality(sweep=d5_sweep))


def test_truncated_moments_bound_monte_carlo(acceptance_lines):
    _record(acceptance_lines, validate.check_truncated_bound())


def test_second_moment_scaling_in_truncation(acceptance_lines):
    _record(acceptance_lines, validate.check_moment_scaling())


def test_survival_constant(acceptance_lines):
    _record(acceptance_lines, validate.check_kolmogorov())


def test_low_dim_tail_exponents(acceptance_lines):
    _record(acceptance_lines, validate.check_tail_exponents())


def test_d4_tail_is_stretched_exponential(acceptance_lines):
    _record(acceptance_lines, validate.check_d4_tail_shape())


def test_d5_tail_is_exponential(acceptance_lines, d5_sweep):
    _record(acceptance_lines, validate.check_d5_tail_shape(sweep=d5_sweep))


def test_second_moment_lower_bound_on_tails(acceptance_lines):
    _record(acceptance_lines, validate.check_paley_zygmund())


def test_bubble_windows(acceptance_lines):
    _record(acceptance_lines, validate.check_bubble_lemmas())
