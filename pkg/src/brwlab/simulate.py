"""Monte Carlo engine for the branching random walk.

One episode is one Galton-Watson tree explored depth first: every
particle draws an offspring count, and each child steps to a uniformly
random lattice neighbour of its parent.  The explicit stack keeps
memory at O(depth), and caps on generation and total progeny are
enforced mid-episode with a truncation flag instead of an exception.

Randomness is counter-based: draw i of episode e under seed s is a
SplitMix64 finalizer applied to a combination of (s, e, i), so results
are reproducible and independent of batch boundaries or schedulers.
Per-episode statistics are aggregated with plain sums, a commutative
reduction, so estimates do not depend on chunk sizes either.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, uint64

from .analysis import wilson_interval
from .errors import ConfigurationError
from .offspring import OffspringDistribution

_CHUNK = 1 << 21  # episodes per kernel call; bounds output-array memory

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_EPISODE_SALT = np.uint64(0xD6E8FEB86659FD93)


@njit(uint64(uint64), inline="always", cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _episode_base(seed, episode):
    return _mix(uint64(seed) ^ _mix(uint64(episode) * _GOLDEN + _EPISODE_SALT))


@njit(inline="always", cache=True)
def _draw(base, index):
    return _mix(base + uint64(index) * _GOLDEN)


@njit(inline="always", cache=True)
def _offspring_from(u, thresholds, counts):
    j = 0
    while j < thresholds.shape[0] - 1 and u >= thresholds[j]:
        j += 1
    return counts[j]


@njit(cache=True)
def _run_batch(
    seed,
    first_episode,
    n_episodes,
    dim,
    start,
    thresholds,
    counts,
    max_gen,
    max_particles,
    tracked,
    win_lo,
    win_hi,
    out_local,
    out_depth,
    out_progeny,
    out_trunc,
    out_window,
):
    n_tracked = tracked.shape[0]
    rem = np.zeros(max_gen + 1, dtype=np.int64)
    moves = np.zeros(max_gen + 1, dtype=np.int8)
    pos = np.zeros(dim, dtype=np.int64)

    for ep in range(n_episodes):
        base = _episode_base(seed, first_episode + ep)
        for j in range(dim):
            pos[j] = start[j]
        depth = 0
        max_depth = 0
        progeny = 1
        truncated = False

        for t in range(n_tracked):
            hit = True
            for j in range(dim):
                if pos[j] != tracked[t, j]:
                    hit = False
                    break
            if hit:
                out_local[ep, t] += 1
                if t == 0 and win_lo <= 0 <= win_hi:
                    out_window[ep] += 1

        # the root is particle 0; each particle spends two counter
        # slots, one for its entry step and one for its offspring count
        off = _offspring_from(_draw(base, 1), thresholds, counts)
        if max_gen == 0:
            if off > 0:
                truncated = True
            off = 0
        rem[0] = off

        while True:
            if rem[depth] > 0:
                if progeny >= max_particles:
                    truncated = True
                    rem[depth] = 0
                    continue
                rem[depth] -= 1
                pidx = progeny
                progeny += 1
                u = _draw(base, 2 * pidx)
                direction = np.int64(u % uint64(2 * dim))
                axis = direction >> 1
                step = np.int64(1) if direction & 1 else np.int64(-1)
                pos[axis] += step
                depth += 1
                moves[depth] = np.int8(direction)
                if depth > max_depth:
                    max_depth = depth

                for t in range(n_tracked):
                    hit = True
                    for j in range(dim):
                        if pos[j] != tracked[t, j]:
                            hit = False
                            break
                    if hit:
                        out_local[ep, t] += 1
                        if t == 0 and win_lo <= depth <= win_hi:
                            out_window[ep] += 1

                off = _offspring_from(_draw(base, 2 * pidx + 1), thresholds, counts)
                if depth == max_gen:
                    if off > 0:
                        truncated = True
                    off = 0
                rem[depth] = off
            else:
                if depth == 0:
                    break
                direction = np.int64(moves[depth])
                axis = direction >> 1
                step = np.int64(1) if direction & 1 else np.int64(-1)
                pos[axis] -= step
                depth -= 1

        out_depth[ep] = max_depth
        out_progeny[ep] = progeny
        out_trunc[ep] = 1 if truncated else 0


@dataclass(frozen=True)
class EpisodeConfig:
    """Everything one episode depends on; hashable for manifests."""

    dim: int
    offspring: OffspringDistribution
    start: tuple = None
    tracked_sites: tuple = None
    max_generation: int = 1024
    max_particles: int = 1 << 22
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigurationError(f"dimension must be positive, got {self.dim}")
        if self.max_generation < 0 or self.max_particles < 1:
            raise ConfigurationError("caps must be positive")
        if self.start is None:
            object.__setattr__(self, "start", (0,) * self.dim)
        if len(self.start) != self.dim:
            raise ConfigurationError(f"start {self.start!r} is not a {self.dim}-vector")
        if self.tracked_sites is None:
            object.__setattr__(self, "tracked_sites", (self.start,))
        for site in self.tracked_sites:
            if len(site) != self.dim:
                raise ConfigurationError(f"tracked site {site!r} is not a {self.dim}-vector")

    def describe(self) -> dict:
        d = dataclasses.asdict(self)
        d["offspring"] = {
            "name": self.offspring.name,
            "values": self.offspring.values.tolist(),
            "probs": self.offspring.probs.tolist(),
        }
        return d


@dataclass
class EpisodeResult:
    local_times: dict
    survival_depth: int
    total_progeny: int
    truncated: bool


@dataclass
class BatchResult:
    """Per-episode arrays for one contiguous block of episode indices."""

    config: EpisodeConfig
    first_episode: int
    local_times: np.ndarray  # (episodes, tracked sites)
    survival_depth: np.ndarray
    total_progeny: np.ndarray
    truncated: np.ndarray
    window_counts: np.ndarray

    @property
    def n_episodes(self) -> int:
        return self.local_times.shape[0]

    def truncation_fraction(self) -> float:
        return float(np.mean(self.truncated))


def _offspring_tables(dist: OffspringDistribution):
    cum = np.cumsum(dist.probs)
    cum = cum / cum[-1]
    thresholds = np.empty(len(cum), dtype=np.uint64)
    for i, c in enumerate(cum[:-1]):
        thresholds[i] = np.uint64(min(int(c * 2.0**64), 2**64 - 1))
    thresholds[-1] = np.uint64(2**64 - 1)
    return thresholds, dist.values.astype(np.int64)


def run_batch(
    config: EpisodeConfig,
    n_episodes: int,
    first_episode: int = 0,
    window: tuple = None,
) -> BatchResult:
    """Simulate episodes [first, first + n); window = (lo, hi) also
    counts visits to the first tracked site in that generation band."""
    thresholds, counts = _offspring_tables(config.offspring)
    tracked = np.asarray(config.tracked_sites, dtype=np.int64).reshape(-1, config.dim)
    win_lo, win_hi = (-1, -1) if window is None else (int(window[0]), int(window[1]))

    local = np.zeros((n_episodes, tracked.shape[0]), dtype=np.int64)
    depth = np.zeros(n_episodes, dtype=np.int64)
    progeny = np.zeros(n_episodes, dtype=np.int64)
    trunc = np.zeros(n_episodes, dtype=np.uint8)
    window_counts = np.zeros(n_episodes, dtype=np.int64)
    _run_batch(
        np.uint64(config.seed),
        np.uint64(first_episode),
        n_episodes,
        config.dim,
        np.asarray(config.start, dtype=np.int64),
        thresholds,
        counts,
        config.max_generation,
        config.max_particles,
        tracked,
        win_lo,
        win_hi,
        local,
        depth,
        progeny,
        trunc,
        window_counts,
    )
    return BatchResult(
        config=config,
        first_episode=first_episode,
        local_times=local,
        survival_depth=depth,
        total_progeny=progeny,
        truncated=trunc,
        window_counts=window_counts,
    )


def run_episode(config: EpisodeConfig, episode: int = 0) -> EpisodeResult:
    """Single episode, as a dict-shaped result for inspection."""
    batch = run_batch(config, 1, first_episode=episode)
    sites = config.tracked_sites
    return EpisodeResult(
        local_times={tuple(s): int(batch.local_times[0, i]) for i, s in enumerate(sites)},
        survival_depth=int(batch.survival_depth[0]),
        total_progeny=int(batch.total_progeny[0]),
        truncated=bool(batch.truncated[0]),
    )


def _iter_batches(config: EpisodeConfig, n_episodes: int, window=None):
    done = 0
    while done < n_episodes:
        take = min(_CHUNK, n_episodes - done)
        yield run_batch(config, take, first_episode=done, window=window)
        done += take


@dataclass
class SurvivalTable:
    r_values: np.ndarray
    probs: np.ndarray
    ci_half_widths: np.ndarray
    episodes: int
    sigma2: float

    def normalized(self) -> np.ndarray:
        """r * P(survive r) * sigma^2/2; tends to 1 under criticality."""
        return self.r_values * self.probs * self.sigma2 / 2.0


def estimate_survival(config: EpisodeConfig, r_values, n_episodes: int) -> SurvivalTable:
    """Survival probabilities P(generation r nonempty) for each r."""
    if not config.offspring.is_critical:
        raise ConfigurationError("survival normalization expects a critical offspring law")
    r_values = np.asarray(sorted(set(int(r) for r in r_values)), dtype=np.int64)
    if r_values[0] < 1 or r_values[-1] > config.max_generation:
        raise ConfigurationError(
            f"survival depths {r_values} must lie in [1, max_generation={config.max_generation}]"
        )
    hits = np.zeros(len(r_values), dtype=np.int64)
    total = 0
    for batch in _iter_batches(config, n_episodes):
        total += batch.n_episodes
        for i, r in enumerate(r_values):
            hits[i] += int(np.sum(batch.survival_depth >= r))
    probs = hits / total
    ci = np.array([wilson_interval(int(h), total)[1] for h in hits])
    return SurvivalTable(
        r_values=r_values,
        probs=probs,
        ci_half_widths=ci,
        episodes=total,
        sigma2=config.offspring.variance,
    )


@dataclass
class TailEstimate:
    thresholds: np.ndarray
    probs: np.ndarray
    ci_half_widths: np.ndarray
    episodes: int
    hit_counts: np.ndarray
    truncation_fraction: float
    site: tuple


def estimate_tail(config: EpisodeConfig, thresholds, n_episodes: int) -> TailEstimate:
    """Empirical survival function of the local time at the first
    tracked site, with Wilson intervals and the truncation fraction."""
    thresholds = np.asarray(thresholds, dtype=np.int64)
    if np.any(np.diff(thresholds) <= 0):
        raise ConfigurationError("thresholds must be strictly ascending")
    hits = np.zeros(len(thresholds), dtype=np.int64)
    truncated = 0
    total = 0
    for batch in _iter_batches(config, n_episodes):
        total += batch.n_episodes
        truncated += int(np.sum(batch.truncated))
        L = batch.local_times[:, 0]
        for i, t in enumerate(thresholds):
            hits[i] += int(np.sum(L >= t))
    probs = hits / total
    ci = np.array([wilson_interval(int(h), total)[1] for h in hits])
    return TailEstimate(
        thresholds=thresholds,
        probs=probs,
        ci_half_widths=ci,
        episodes=total,
        hit_counts=hits,
        truncation_fraction=truncated / total,
        site=tuple(config.tracked_sites[0]),
    )


@dataclass
class MomentEstimate:
    value: float
    std_error: float
    ci_half_width: float  # bootstrap, 99.7% (3-sigma-equivalent)
    episodes: int
    truncation_fraction: float
    truncation_margin: float


def estimate_joint_moments(
    config: EpisodeConfig, points, k: int, n_episodes: int, rng_seed: int = 0
) -> MomentEstimate:
    """Mean of prod_i L(x_i) over episodes, with a batch-bootstrap CI.

    points lists the k sites (repeats allowed); they must all be
    tracked.  The truncation margin is a first-order Cauchy-Schwarz
    bound on what clipped episodes could have added,
    sqrt(E[P^2] * truncation fraction); it matters only when the caps
    are meant to be out of reach.  When the generation cap is the
    quantity of interest (a truncated moment L_n), clipped episodes are
    not a bias and the margin should be ignored.
    """
    if not 1 <= k <= 4:
        raise ConfigurationError(f"joint moments supported for k <= 4, got {k}")
    if len(points) != k:
        raise ConfigurationError(f"need {k} points, got {len(points)}")
    site_index = {tuple(s): i for i, s in enumerate(config.tracked_sites)}
    try:
        cols = [site_index[tuple(p)] for p in points]
    except KeyError as exc:
        raise ConfigurationError(f"point {exc} is not a tracked site") from exc

    block_means = []
    total = 0
    truncated = 0
    running_sum = 0.0
    running_sq = 0.0
    for batch in _iter_batches(config, n_episodes):
        prod = batch.local_times[:, cols[0]].astype(np.float64)
        for c in cols[1:]:
            prod = prod * batch.local_times[:, c]
        total += batch.n_episodes
        truncated += int(np.sum(batch.truncated))
        running_sum += float(np.sum(prod))
        running_sq += float(np.dot(prod, prod))
        splits = max(1, prod.size // 4096)
        block_means.extend(float(np.mean(b)) for b in np.array_split(prod, splits))

    mean = running_sum / total
    second = running_sq / total
    var = max(second - mean * mean, 0.0)
    std_error = float(np.sqrt(var / total))
    blocks = np.asarray(block_means)
    rng = np.random.default_rng(rng_seed)
    resamples = rng.choice(blocks, size=(400, blocks.size), replace=True).mean(axis=1)
    ci = float(np.quantile(np.abs(resamples - blocks.mean()), 0.997))
    frac = truncated / total
    return MomentEstimate(
        value=mean,
        std_error=std_error,
        ci_half_width=max(ci, 3.0 * std_error),
        episodes=total,
        truncation_fraction=frac,
        truncation_margin=math.sqrt(second * frac),
    )


@dataclass
class BlockMeanEstimate:
    r: int
    value: float  # conditional on the block being visited; nan if never
    std_error: float
    positive_episodes: int
    episodes: int

    @property
    def defined(self) -> bool:
        return self.positive_episodes > 0


def estimate_block_mean(config: EpisodeConfig, r: int, n_episodes: int) -> BlockMeanEstimate:
    """E[sum_{l=r}^{2r} B_l(x) | positive] at the first tracked site."""
    if config.max_generation < 2 * r:
        raise ConfigurationError(
            f"block window [{r}, {2 * r}] needs max_generation >= {2 * r}"
        )
    total = 0
    positive = 0
    s = 0.0
    sq = 0.0
    for batch in _iter_batches(config, n_episodes, window=(r, 2 * r)):
        w = batch.window_counts
        total += batch.n_episodes
        positive += int(np.sum(w > 0))
        s += float(np.sum(w))
        sq += float(np.dot(w.astype(np.float64), w))
    if positive == 0:
        return BlockMeanEstimate(r=r, value=float("nan"), std_error=float("nan"),
                                 positive_episodes=0, episodes=total)
    mean = s / positive
    var = max(sq / positive - mean * mean, 0.0)
    return BlockMeanEstimate(
        r=r,
        value=mean,
        std_error=float(np.sqrt(var / positive)),
        positive_episodes=positive,
        episodes=total,
    )
