"""Monte Carlo engine: determinism, hand laws, and scaling windows."""

from fractions import Fraction
import math

import numpy as np
import pytest

from brwlab.errors import ConfigurationError
from brwlab.moments import MomentRequest, exact_moment
from brwlab.offspring import binary_offspring, explicit_offspring, geometric_offspring
from brwlab.simulate import (
    EpisodeConfig,
    estimate_block_mean,
    estimate_joint_moments,
    estimate_survival,
    estimate_tail,
    run_batch,
    run_episode,
)

from oracles import survival_iterate


def _config(**kw):
    kw.setdefault("dim", 1)
    kw.setdefault("offspring", binary_offspring())
    kw.setdefault("seed", 42)
    return EpisodeConfig(**kw)


def test_degenerate_law_is_a_single_particle():
    cfg = _config(offspring=explicit_offspring({0: 1.0}, name="die"))
    for ep in (0, 1, 7):
        out = run_episode(cfg, ep)
        assert out.local_times == {(0,): 1}
        assert out.survival_depth == 0
        assert out.total_progeny == 1
        assert not out.truncated


def test_fixed_seed_is_reproducible():
    cfg = _config(max_generation=32)
    a = run_batch(cfg, 500)
    b = run_batch(cfg, 500)
    assert np.array_equal(a.local_times, b.local_times)
    assert np.array_equal(a.survival_depth, b.survival_depth)
    assert np.array_equal(a.total_progeny, b.total_progeny)


def test_episode_index_not_batch_boundary_drives_randomness():
    cfg = _config(max_generation=32)
    whole = run_batch(cfg, 400)
    first = run_batch(cfg, 150, first_episode=0)
    second = run_batch(cfg, 250, first_episode=150)
    assert np.array_equal(
        whole.local_times, np.concatenate([first.local_times, second.local_times])
    )
    assert np.array_equal(
        whole.total_progeny, np.concatenate([first.total_progeny, second.total_progeny])
    )


def test_seed_changes_the_sample():
    a = run_batch(_config(seed=1, max_generation=16), 200)
    b = run_batch(_config(seed=2, max_generation=16), 200)
    assert not np.array_equal(a.local_times, b.local_times)


def test_run_episode_agrees_with_run_batch():
    cfg = _config(max_generation=16)
    batch = run_batch(cfg, 10)
    for ep in range(10):
        single = run_episode(cfg, ep)
        assert single.total_progeny == batch.total_progeny[ep]
        assert single.survival_depth == batch.survival_depth[ep]
        assert single.local_times.get((0,), 0) == batch.local_times[ep, 0]


def test_mean_local_time_matches_exact_engine():
    cfg = _config(max_generation=2, seed=7)
    batch = run_batch(cfg, 200_000)
    mean = batch.local_times[:, 0].mean()
    se = batch.local_times[:, 0].std(ddof=1) / math.sqrt(batch.n_episodes)
    exact = exact_moment(
        MomentRequest(
            dim=1, offspring=binary_offspring(), points=((0,),), truncation=2
        )
    ).value
    assert abs(mean - exact) <= 4 * se


def test_survival_probabilities_match_generating_function():
    cfg = _config(max_generation=8, seed=11)
    table = estimate_survival(cfg, (1, 2, 4, 8), 200_000)
    pmf = {0: Fraction(1, 2), 2: Fraction(1, 2)}
    assert table.sigma2 == pytest.approx(1.0)
    for r, p, ci in zip(table.r_values, table.probs, table.ci_half_widths):
        truth = float(survival_iterate(pmf, r))
        assert abs(p - truth) <= 1.5 * ci + 1e-9
    assert table.probs[0] == pytest.approx(0.5, abs=0.01)
    assert table.probs[1] == pytest.approx(0.375, abs=0.01)


def test_total_progeny_criticality():
    # one expected particle per generation: E[progeny] = g + 1
    g = 16
    cfg = _config(max_generation=g, seed=5)
    batch = run_batch(cfg, 50_000)
    mean = batch.total_progeny.mean()
    se = batch.total_progeny.std(ddof=1) / math.sqrt(batch.n_episodes)
    assert abs(mean - (g + 1)) <= 4 * se


def test_truncation_fraction_tracks_survival_decay():
    # episodes flagged truncated are exactly those alive at the cap,
    # so the fraction sits near 2 / (sigma^2 g)
    for g in (16, 64):
        cfg = _config(max_generation=g, seed=9)
        frac = run_batch(cfg, 100_000).truncation_fraction()
        target = 2.0 / g
        assert target / 3.0 <= frac <= target * 3.0


def test_window_counts_full_band_equals_local_time():
    cfg = _config(max_generation=16, seed=3)
    batch = run_batch(cfg, 2_000, window=(0, 16))
    assert np.array_equal(batch.window_counts, batch.local_times[:, 0])


def test_window_counts_bands_partition():
    cfg = _config(max_generation=16, seed=3)
    low = run_batch(cfg, 2_000, window=(0, 7)).window_counts
    high = run_batch(cfg, 2_000, window=(8, 16)).window_counts
    full = run_batch(cfg, 2_000, window=(0, 16)).window_counts
    assert np.array_equal(low + high, full)


def test_tail_estimate_shape_and_monotonicity():
    cfg = _config(max_generation=64, seed=21)
    tail = estimate_tail(cfg, (1, 2, 4, 8, 16), 50_000)
    assert list(tail.thresholds) == [1, 2, 4, 8, 16]
    assert all(a >= b for a, b in zip(tail.probs, tail.probs[1:]))
    assert all(h == pytest.approx(p * tail.episodes) for h, p in zip(tail.hit_counts, tail.probs))
    assert all(c > 0 for c in tail.ci_half_widths)
    assert 0.0 <= tail.truncation_fraction <= 1.0
    assert tail.site == (0,)


def test_tail_thresholds_must_ascend():
    cfg = _config()
    with pytest.raises(ConfigurationError):
        estimate_tail(cfg, (4, 2, 8), 100)
    empty = estimate_tail(cfg, (), 100)  # vacuously ordered
    assert len(empty.probs) == 0


def test_joint_moment_requires_tracked_points():
    cfg = _config(tracked_sites=((0,),))
    with pytest.raises(ConfigurationError):
        estimate_joint_moments(cfg, ((5,),), 1, 100)


def test_joint_moment_matches_exact_engine():
    cfg = _config(max_generation=4, seed=1)
    est = estimate_joint_moments(cfg, ((0,),), 1, 200_000)
    exact = exact_moment(
        MomentRequest(
            dim=1, offspring=binary_offspring(), points=((0,),), truncation=4
        )
    ).value
    assert abs(est.value - exact) <= 4 * est.std_error
    # episodes alive at the cap are counted so equality-mode callers
    # can budget for the mass the cap hides
    assert est.truncation_fraction > 0.0
    assert est.truncation_margin > 0.0


def test_tiny_particle_cap_truncates_without_raising():
    cfg = _config(max_generation=1024, max_particles=4, seed=17)
    batch = run_batch(cfg, 2_000)
    assert batch.truncated.any()
    assert batch.total_progeny.max() <= 5  # cap + the particle that tripped it


def test_block_mean_undefined_without_positive_events():
    cfg = _config(offspring=explicit_offspring({0: 1.0}, name="die"), max_generation=32)
    out = estimate_block_mean(cfg, 4, 2_000)
    assert out.positive_episodes == 0
    assert math.isnan(out.value)


def test_block_mean_windows_low_dimensions():
    # conditional block sums scale like r^{(6-d)/2 - 1}: r^{3/2} in d=1, r in d=2
    r = 16
    cfg1 = _config(max_generation=2 * r, seed=31)
    est1 = estimate_block_mean(cfg1, r, 100_000)
    assert 0.15 <= est1.value / r**1.5 <= 0.45
    cfg2 = _config(dim=2, max_generation=2 * r, seed=32)
    est2 = estimate_block_mean(cfg2, r, 100_000)
    assert 0.12 <= est2.value / r <= 0.47


def test_config_validation_errors():
    with pytest.raises(ConfigurationError):
        _config(dim=0)
    with pytest.raises(ConfigurationError):
        _config(start=(0, 0))  # wrong arity for dim=1
    with pytest.raises(ConfigurationError):
        _config(tracked_sites=((0, 0),))
    with pytest.raises(ConfigurationError):
        _config(max_particles=0)


def test_config_defaults_track_the_start():
    cfg = EpisodeConfig(dim=3, offspring=binary_offspring(), start=(1, 2, 3))
    assert cfg.tracked_sites == ((1, 2, 3),)
