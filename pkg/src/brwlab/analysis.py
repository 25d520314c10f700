"""Fits, interval estimates, and inequality utilities for tail data.

The tail laws we test are Theta statements, so every fitter works on a
transformed scale where the law is a straight line: log-log for power
decay, log vs n for exponential, log vs sqrt(n) for stretched
exponential.  Weighted least squares on those scales is deterministic
and recovers noiseless synthetic inputs exactly, which keeps the
fitters themselves testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FitError

_MIN_FIT_POINTS = 5


def wilson_interval(successes: int, total: int, z: float = 3.0):
    """Return (p_hat, half_width) with p_hat +- half_width covering the
    Wilson score interval at z standard normal units."""
    if total <= 0 or not 0 <= successes <= total:
        raise DomainError(f"invalid counts {successes}/{total}")
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2 * total)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / total + z2 / (4 * total * total))
    return p, max(center + half - p, p - (center - half))


@dataclass(frozen=True)
class FitResult:
    model: str  # power | exp | stretched_exp
    slope: float  # on the transformed scale; exponent for power fits
    intercept: float
    r_squared: float
    n_points: int
    n_dropped: int
    data_range: tuple

    @property
    def rate(self) -> float:
        """Decay rate for exp / stretched_exp fits."""
        return -self.slope

    @property
    def amplitude(self) -> float:
        return math.exp(self.intercept)


_TRANSFORMS = {
    "power": np.log,
    "exp": lambda n: np.asarray(n, dtype=float),
    "stretched_exp": np.sqrt,
}


def _prepare(tail, n_range):
    n = np.asarray(tail.thresholds, dtype=float)
    p = np.asarray(tail.probs, dtype=float)
    ci = getattr(tail, "ci_half_widths", None)
    ci = None if ci is None else np.asarray(ci, dtype=float)
    if n_range is not None:
        keep = (n >= n_range[0]) & (n <= n_range[1])
        n, p = n[keep], p[keep]
        ci = None if ci is None else ci[keep]
    positive = p > 0
    dropped = int(np.sum(~positive))
    n, p = n[positive], p[positive]
    ci = None if ci is None else ci[positive]
    if len(n) < _MIN_FIT_POINTS:
        raise FitError(
            f"{len(n)} usable points after dropping {dropped} zero-mass entries; "
            f"need at least {_MIN_FIT_POINTS}"
        )
    return n, p, ci, dropped


def _fit_line(model: str, tail, n_range=None) -> FitResult:
    n, p, ci, dropped = _prepare(tail, n_range)
    x = _TRANSFORMS[model](n)
    y = np.log(p)
    if ci is not None and np.all(ci > 0):
        w = (p / ci) ** 2  # delta method: sd(log p) ~ ci/p up to the z factor
    else:
        w = np.ones_like(y)
    sw = np.sqrt(w)
    design = np.column_stack([x * sw, sw])
    coef, *_ = np.linalg.lstsq(design, y * sw, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = y - (slope * x + intercept)
    ybar = float(np.sum(w * y) / np.sum(w))
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    ss_res = float(np.sum(w * resid**2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return FitResult(
        model=model,
        slope=slope,
        intercept=intercept,
        r_squared=min(r2, 1.0),
        n_points=len(n),
        n_dropped=dropped,
        data_range=(float(n[0]), float(n[-1])),
    )


def fit_power(tail, n_range=None) -> FitResult:
    """WLS of log P-hat against log n; slope is the decay exponent."""
    return _fit_line("power", tail, n_range)


def fit_exponential(tail, n_range=None) -> FitResult:
    return _fit_line("exp", tail, n_range)


@dataclass(frozen=True)
class ModelComparison:
    fits: dict
    preferred: str  # model with the best transformed-scale R^2

    @property
    def stretched(self) -> FitResult:
        return self.fits["stretched_exp"]


def fit_stretched(tail, n_range=None) -> ModelComparison:
    """Fit log P-hat as linear in sqrt(n), in n, and in log n, and
    report which transform straightens the data best.  A genuinely
    stretched-exponential tail shows up as stretched_exp preferred with
    high R^2; comparing R^2 across transforms is scale-free because
    each is computed on its own x axis with the same y."""
    fits = {m: _fit_line(m, tail, n_range) for m in ("stretched_exp", "exp", "power")}
    preferred = max(fits, key=lambda m: fits[m].r_squared)
    return ModelComparison(fits=fits, preferred=preferred)


@dataclass(frozen=True)
class PZBound:
    p: float
    epsilon: float
    mean: float
    p_moment: float
    value: float


def pz_bound(p: float, epsilon: float, mean: float, p_moment: float) -> PZBound:
    """L^p Paley-Zygmund lower bound
    (1-eps)^{p/(p-1)} E[X]^{p/(p-1)} / E[X^p]^{1/(p-1)}
    for P(X >= eps E[X]), and equally for P(X >= eps E[X | X > 0])."""
    if p <= 1:
        raise DomainError(f"need p > 1, got {p}")
    if not 0 <= epsilon <= 1:
        raise DomainError(f"need 0 <= epsilon <= 1, got {epsilon}")
    if mean < 0 or p_moment < 0:
        raise DomainError("moments of a nonnegative variable cannot be negative")
    if mean == 0:
        return PZBound(p, epsilon, mean, p_moment, 0.0)
    # Jensen: E[X^p] >= E[X]^p, so the bound is automatically <= 1
    if p_moment < mean**p * (1 - 1e-12):
        raise DomainError(f"E[X^p]={p_moment} < E[X]^p={mean ** p} is impossible")
    q = p / (p - 1)
    value = (1 - epsilon) ** q * mean**q / p_moment ** (1 / (p - 1))
    return PZBound(p, epsilon, mean, p_moment, min(value, 1.0))


@dataclass(frozen=True)
class PZReport:
    bound: float
    truth: float
    conditional_mean: float
    passed: bool


def pz_verify(atoms, probs, p: float, epsilon: float) -> PZReport:
    """Brute-force the conditional tail P(X >= eps E[X | X>0]) of a
    finite nonnegative distribution and check it dominates pz_bound."""
    atoms = np.asarray(atoms, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if np.any(atoms < 0) or np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, rel_tol=1e-9):
        raise DomainError("need nonnegative atoms and probabilities summing to 1")
    mean = float(np.dot(probs, atoms))
    p_moment = float(np.dot(probs, atoms**p))
    mass_positive = float(np.sum(probs[atoms > 0]))
    if mass_positive == 0:
        raise DomainError("conditional mean undefined: P(X > 0) = 0")
    cond_mean = mean / mass_positive
    truth = float(np.sum(probs[atoms >= epsilon * cond_mean - 1e-12]))
    bound = pz_bound(p, epsilon, mean, p_moment).value
    return PZReport(
        bound=bound,
        truth=truth,
        conditional_mean=cond_mean,
        passed=bound <= truth + 1e-12,
    )


@dataclass(frozen=True)
class KolmogorovReport:
    r_values: np.ndarray
    normalized: np.ndarray  # r * P-hat * sigma^2 / 2
    normalized_ci: np.ndarray
    final_value: float
    tolerance: float
    passed: bool
    detail: str = field(default="", compare=False)


def kolmogorov_check(table, sigma2: float = None, tolerance: float = 0.1) -> KolmogorovReport:
    """Check r * P(generation r nonempty) * sigma^2/2 -> 1 on a survival
    table; only the deepest r is asserted, shallower ones are context."""
    if sigma2 is None:
        sigma2 = table.sigma2
    if sigma2 <= 0:
        raise DomainError("degenerate offspring law: sigma^2 must be positive")
    r = np.asarray(table.r_values, dtype=float)
    normalized = r * np.asarray(table.probs, dtype=float) * sigma2 / 2.0
    ci = r * np.asarray(table.ci_half_widths, dtype=float) * sigma2 / 2.0
    final = float(normalized[-1])
    passed = abs(final - 1.0) <= tolerance
    lines = [
        f"r={int(rv):6d}  rP(sigma^2/2)={nv:.4f} +- {cv:.4f}"
        for rv, nv, cv in zip(r, normalized, ci)
    ]
    return KolmogorovReport(
        r_values=r.astype(np.int64),
        normalized=normalized,
        normalized_ci=ci,
        final_value=final,
        tolerance=tolerance,
        passed=passed,
        detail="\n".join(lines),
    )
