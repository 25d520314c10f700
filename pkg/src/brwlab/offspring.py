"""Offspring laws for the branching walk.

A law lives on {0, 1, 2, ...} and is held as an explicit table
(values, probs).  The built-in families are the critical laws used
throughout the checks:

* binary      -- half chance of no children, half chance of two,
* geometric   -- P(n) = (1-lam) lam^n with lam = 1/2 at criticality,
* poisson     -- rate-one Poisson.

Parametric families remember their closed form so that descending
binomial moments b_k = sum_n C(n, k) mu(n) can be summed past the table
truncation with a certified error, and an exponential envelope
mu(n) <= C lam^n for the sub-exponential tail checks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PrecisionLossError

CRITICAL_TOL = 1e-9
_PMF_TRUNCATION = 1e-15
_MAX_MOMENT_ORDER = 64


@dataclass(frozen=True)
class OffspringDistribution:
    name: str
    values: np.ndarray
    probs: np.ndarray
    family: str = "explicit"
    params: tuple = ()
    # Envelope constants (C, lam) with mu(n) <= C * lam^n for all n.
    envelope: tuple = ()

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    @property
    def variance(self) -> float:
        m = self.mean
        return float(np.dot((self.values - m) ** 2, self.probs))

    @property
    def is_critical(self) -> bool:
        return abs(self.mean - 1.0) <= CRITICAL_TOL

    @property
    def is_nontrivial(self) -> bool:
        """mu(1) < 1: the tree is not the deterministic half-line."""
        one = self.probs[self.values == 1]
        return float(one[0]) < 1.0 if one.size else True

    def prob(self, n: int) -> float:
        hit = self.probs[self.values == n]
        return float(hit[0]) if hit.size else 0.0

    def generating_function(self, s: float) -> float:
        return float(np.dot(self.probs, np.power(float(s), self.values)))

    def extinction_by(self, r: int) -> float:
        """P(no particles in generation r) via r-fold iteration of the
        generating function starting from 0."""
        q = 0.0
        for _ in range(r):
            q = self.generating_function(q)
        return q

    def to_csv(self, path) -> None:
        """Dump the stored pmf table as count,probability rows."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["count", "probability"])
            for v, p in zip(self.values, self.probs):
                writer.writerow([int(v), repr(float(p))])

    def survival_probability(self, r: int) -> float:
        """P(generation r is nonempty)."""
        return 1.0 - self.extinction_by(r)


def _finish(name: str, values, probs, family: str, params: tuple,
            envelope: tuple) -> OffspringDistribution:
    values = np.asarray(values, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if values.ndim != 1 or values.shape != probs.shape:
        raise ConfigurationError("offspring table must be two equal-length vectors")
    if values.size == 0:
        raise ConfigurationError("offspring table is empty")
    if np.any(values < 0) or np.unique(values).size != values.size:
        raise ConfigurationError("offspring counts must be distinct nonnegative integers")
    if np.any(probs < 0):
        raise ConfigurationError("offspring probabilities must be nonnegative")
    total = float(np.sum(probs))
    if abs(total - 1.0) > 1e-9:
        raise ConfigurationError(f"offspring probabilities sum to {total}, not 1")
    probs = probs / total
    order = np.argsort(values)
    dist = OffspringDistribution(
        name=name,
        values=values[order],
        probs=probs[order],
        family=family,
        params=params,
        envelope=envelope,
    )
    dist.values.setflags(write=False)
    dist.probs.setflags(write=False)
    return dist


def binary_offspring() -> OffspringDistribution:
    """Critical binary law: 0 or 2 children with probability 1/2 each."""
    return _finish("binary", [0, 2], [0.5, 0.5], "binary", (), (2.0, 0.5))


def geometric_offspring(lam: float = 0.5) -> OffspringDistribution:
    """Geometric law P(n) = (1 - lam) lam^n; critical exactly at lam = 1/2."""
    if not 0.0 < lam < 1.0:
        raise ConfigurationError(f"geometric parameter must be in (0, 1), got {lam}")
    n_max = max(4, math.ceil(math.log(_PMF_TRUNCATION) / math.log(lam)))
    values = np.arange(n_max + 1)
    probs = (1.0 - lam) * lam ** values.astype(np.float64)
    return _finish(f"geometric({lam:g})", values, probs, "geometric", (lam,),
                   (1.0 - lam, lam))


def poisson_offspring(rate: float = 1.0) -> OffspringDistribution:
    """Poisson law with the given rate; critical exactly at rate = 1."""
    if rate <= 0:
        raise ConfigurationError(f"poisson rate must be positive, got {rate}")
    n_max = 4
    while math.exp(-rate) * rate ** n_max / math.factorial(n_max) > _PMF_TRUNCATION:
        n_max += 1
    values = np.arange(n_max + 1)
    probs = np.array([math.exp(-rate) * rate**n / math.factorial(n) for n in values])
    # Envelope with lam = 1/2: C = max_n mu(n) 2^n, attained at small n.
    env_c = max(math.exp(-rate) * rate**n * 2**n / math.factorial(n) for n in range(n_max + 1))
    return _finish(f"poisson({rate:g})", values, probs, "poisson", (rate,), (env_c, 0.5))


def explicit_offspring(pmf: dict, name: str = "explicit") -> OffspringDistribution:
    """Finite-support law from a {count: probability} table."""
    if not pmf:
        raise ConfigurationError("explicit offspring table is empty")
    values = list(pmf.keys())
    probs = list(pmf.values())
    lam = 0.5
    env_c = max(p / lam**v for v, p in pmf.items() if p > 0)
    return _finish(name, values, probs, "explicit", (), (env_c, lam))


def make_distribution(spec) -> OffspringDistribution:
    """Build a law from a config-style spec.

    Accepts either a family string ("binary", "geometric", "geometric:0.4",
    "poisson", "poisson:1.0") or a {count: probability} mapping.
    """
    if isinstance(spec, OffspringDistribution):
        return spec
    if isinstance(spec, dict):
        try:
            table = {int(k): float(v) for k, v in spec.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad explicit offspring table: {spec!r}") from exc
        return explicit_offspring(table)
    if isinstance(spec, str):
        head, _, arg = spec.partition(":")
        head = head.strip().lower()
        if head == "binary":
            return binary_offspring()
        if head == "geometric":
            return geometric_offspring(float(arg) if arg else 0.5)
        if head == "poisson":
            return poisson_offspring(float(arg) if arg else 1.0)
        raise ConfigurationError(f"unknown offspring family {spec!r}")
    raise ConfigurationError(f"cannot interpret offspring spec {spec!r}")


def descending_binomial_moments(dist: OffspringDistribution, order: int) -> np.ndarray:
    """b_k = sum_n C(n, k) mu(n) for k = 0..order.

    For parametric families the sum is extended past the stored table
    with the closed-form pmf until the remainder is certified below
    1e-12; an explicit table is summed exactly.  b_0 = 1 always and
    b_1 = mean, so b_1 = 1 characterises criticality.
    """
    if order < 0:
        raise ConfigurationError(f"moment order must be nonnegative, got {order}")
    if order > _MAX_MOMENT_ORDER:
        raise PrecisionLossError(
            f"descending binomial moments of order {order} exceed the supported "
            f"range ({_MAX_MOMENT_ORDER}); binomial weights overwhelm the pmf tail bound"
        )
    out = np.zeros(order + 1)
    for k in range(order + 1):
        out[k] = _descending_moment(dist, k)
    return out


def _descending_moment(dist: OffspringDistribution, k: int) -> float:
    acc = 0.0
    for v, p in zip(dist.values, dist.probs):
        if v >= k:
            acc += math.comb(int(v), k) * p
    if dist.family == "geometric":
        (lam,) = dist.params
        acc += _geometric_moment_tail(lam, k, int(dist.values[-1]))
    elif dist.family == "poisson":
        (rate,) = dist.params
        acc += _poisson_moment_tail(rate, k, int(dist.values[-1]))
    return acc


def _geometric_moment_tail(lam: float, k: int, n_table: int, tol: float = 1e-13) -> float:
    """sum_{n > n_table} C(n, k) (1-lam) lam^n, certified below tol.

    Term ratio C(n+1,k)/C(n,k) * lam = lam (n+1)/(n+1-k) is eventually
    below 1, so a geometric majorant bounds the remainder.
    """
    n = n_table + 1
    acc = 0.0
    term = math.comb(n, k) * (1.0 - lam) * lam**n
    while True:
        ratio = lam * (n + 1) / (n + 1 - k)
        if ratio < 1.0 and term / (1.0 - ratio) < tol:
            return acc
        acc += term
        n += 1
        if n > 100_000:
            raise PrecisionLossError(
                f"geometric moment tail for k={k} did not certify below {tol}"
            )
        term = math.comb(n, k) * (1.0 - lam) * lam**n


def _poisson_moment_tail(rate: float, k: int, n_table: int, tol: float = 1e-14) -> float:
    n = n_table + 1
    acc = 0.0
    while True:
        term = math.comb(n, k) * math.exp(-rate) * rate**n / math.factorial(n)
        ratio = rate * (n + 1) / ((n + 1 - k) * (n + 1))
        if ratio < 1.0 and term / (1.0 - ratio) < tol:
            return acc
        acc += term
        n += 1
        if n > 100_000:
            raise PrecisionLossError(
                f"poisson moment tail for k={k} did not certify below {tol}"
            )


def envelope_moment_bound(dist: OffspringDistribution, k: int) -> float:
    """The sub-exponential tail bound b_k <= C/(1-lam) (lam/(1-lam))^k."""
    if not dist.envelope:
        raise ConfigurationError(f"{dist.name} has no declared exponential envelope")
    env_c, lam = dist.envelope
    return env_c / (1.0 - lam) * (lam / (1.0 - lam)) ** k
