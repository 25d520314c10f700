"""Local-time moments assembled from skeletons, weights, and diagrams.

The k-th joint moment of local times at x_1..x_k for a walk started at
x_0 expands over k-skeletons: each skeleton contributes its diagram
value times the product over vertices of the descending binomial moment
b_{c(v)} of the offspring law.  Truncated diagrams give an exact upper
bound for truncated local times; untruncated diagrams give an equality
whenever every diagram is summable (always in d >= 5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diagrams import doubling_limit, evaluate_truncated
from .errors import ConfigurationError, DomainError, ResourceLimitError
from .lattice import graph_weight
from .offspring import OffspringDistribution, descending_binomial_moments
from .skeletons import enumerate_skeletons, skeleton_weight

K_MAX = 6


@dataclass(frozen=True)
class MomentRequest:
    """Joint moment E[prod_i L(x_i)] specification.

    points: the k target sites; start: x_0; truncation: generation cap n
    for truncated moments, or None to request the untruncated limit.
    """

    dim: int
    offspring: OffspringDistribution
    points: tuple
    start: tuple = None
    truncation: int = None
    limit_tol: float = 1e-6
    assert_convergent: bool = False

    def __post_init__(self) -> None:
        if not 1 <= len(self.points) <= K_MAX:
            raise ConfigurationError(
                f"moment order must be between 1 and {K_MAX}, got {len(self.points)}"
            )
        if self.start is None:
            object.__setattr__(self, "start", (0,) * self.dim)

    @property
    def order(self) -> int:
        return len(self.points)


@dataclass
class MomentValue:
    value: float
    mode: str  # "upper_bound" for truncated, "equality" for limits
    error_bound: float
    terms: list = field(default_factory=list)  # (skeleton encoding, diagram, weight)


def exact_moment(request: MomentRequest, keep_terms: bool = False) -> MomentValue:
    """Sum the diagrammatic expansion over all skeletons of the order.

    Truncated mode returns the exact value of the upper-bound display.
    Limit mode drives the whole truncated sum up a doubling ladder and
    extrapolates once the moment-level increments are below tol; sharing
    the ladder across skeletons keeps the error bound tight and reuses
    each kernel once per level.
    """
    k = request.order
    if request.truncation is None and request.dim < 5 and k >= 2 and not request.assert_convergent:
        raise DomainError(
            f"untruncated order-{k} moments are only summable for d >= 5; "
            f"got d={request.dim} (pass assert_convergent to override)"
        )
    if request.truncation is None and request.dim < 3:
        raise DomainError(f"untruncated moments require d >= 3, got d={request.dim}")
    skels = enumerate_skeletons(k)
    max_children = max(max(s.tree.child_counts) for s in skels)
    b = descending_binomial_moments(request.offspring, max_children)
    weighted = [(s, w) for s in skels if (w := skeleton_weight(s, b)) != 0.0]
    pins = [request.start] + list(request.points)

    terms = []

    def truncated_sum(n: int) -> float:
        memo = {}
        total = 0.0
        terms.clear()
        for skel, weight in weighted:
            dv = evaluate_truncated(skel, pins, n, request.dim, _memo=memo)
            total += weight * dv.value
            if keep_terms:
                terms.append((skel.encode(), dv.value, weight))
        return total

    if request.truncation is not None:
        value = truncated_sum(request.truncation)
        return MomentValue(value=value, mode="upper_bound", error_bound=0.0, terms=terms)
    value, err, _ = doubling_limit(truncated_sum, request.limit_tol)
    return MomentValue(value=value, mode="equality", error_bound=err, terms=terms)


def second_moment_bound(dim: int, n: int, offspring: OffspringDistribution) -> float:
    """Exact truncated bound for E[L_n(0)^2]; convenience for scaling scans."""
    request = MomentRequest(
        dim=dim, offspring=offspring, points=((0,) * dim,) * 2, truncation=n
    )
    return exact_moment(request).value


def predicted_tail(dim: int, n: float, x, amplitude: float = 1.0, rate: float = 1.0) -> float:
    """Predicted scaling form of P(L(x) >= n) in each dimension regime.

    The amplitude and rate come from fits, never from theory; this is an
    overlay curve.  At x = 0 the pure time laws apply: n^{-2/(4-d)} for
    d < 4, exp(-rate sqrt(n)) at d = 4, exp(-rate n) for d > 4.  Away
    from 0 the space factors <x>^{-2} (d < 4), <x>^{-2}/log<x> (d = 4),
    and <x>^{-d+2} (d > 4) multiply in, with the d = 4 time decay capped
    at n / log<x>.
    """
    if dim < 1:
        raise DomainError(f"dimension must be positive, got {dim}")
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    w = float(graph_weight(x[np.newaxis, :])[0])
    at_origin = not np.any(x)
    if dim < 4:
        time_part = float(n) ** (-2.0 / (4 - dim))
        return amplitude * (time_part if at_origin else min(time_part, w**-2.0))
    if dim == 4:
        if at_origin:
            return amplitude * math.exp(-rate * math.sqrt(n))
        decay = min(math.sqrt(n), n / math.log(w))
        return amplitude * math.exp(-rate * decay) * w**-2.0 / math.log(w)
    space_part = 1.0 if at_origin else w ** float(-dim + 2)
    return amplitude * math.exp(-rate * n) * space_part


def moment_growth_profile(offspring: OffspringDistribution, K: int, n: int, dim: int = 4):
    """Normalized moment-growth sequence at the origin in d = 4.

    a_k = (bound_k / (k! (k + log 2)^{k-1} 2^{-2}))^{1/k}, where bound_k
    is the truncated moment bound; the predicted profile has a_k bounded
    above and below, so the ratio sequence a_{k+1}/a_k should stay in a
    fixed window.
    """
    if K > 4:
        raise ResourceLimitError(f"moment growth profile capped at K=4, got K={K}")
    if K < 1:
        raise ConfigurationError(f"need K >= 1, got K={K}")
    a = []
    for k in range(1, K + 1):
        request = MomentRequest(
            dim=dim, offspring=offspring, points=((0,) * dim,) * k, truncation=n
        )
        bound = exact_moment(request).value
        norm = math.factorial(k) * (k + math.log(2.0)) ** (k - 1) * 2.0**-2
        a.append((bound / norm) ** (1.0 / k))
    ratios = [a[i + 1] / a[i] for i in range(len(a) - 1)]
    return a, ratios
