"""End-to-end validation suite.

Each check_* function exercises one verifiable statement about the
package: an exact combinatorial count, an inequality between engines,
or a statistical law estimated by Monte Carlo and tested against the
exact engines at fixed tolerances.  All Monte Carlo configurations
(offspring law, caps, thresholds, episode counts, seeds) were pilot
calibrated once and are frozen here; the checks are deterministic.

The functions return CriterionResult and never assert, so they can be
driven equally by pytest and by the validate CLI subcommand.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .analysis import (
    fit_exponential,
    fit_power,
    fit_stretched,
    kolmogorov_check,
    pz_verify,
    wilson_interval,
)
from .diagrams import check_recursion, evaluate_truncated, noninjective_reduction_check
from .errors import ConfigurationError, FitError
from .lattice import (
    bubble_sum,
    graph_weight,
    green_value,
    log_bubble_sum,
    truncated_green,
)
from .moments import MomentRequest, exact_moment, second_moment_bound
from .offspring import binary_offspring, explicit_offspring, geometric_offspring
from .simulate import (
    EpisodeConfig,
    TailEstimate,
    estimate_joint_moments,
    estimate_survival,
    estimate_tail,
    run_batch,
)
from .skeletons import (
    PlaneTree,
    Skeleton,
    catalan_tree_count,
    enumerate_plane_trees,
    enumerate_skeletons,
    max_skeleton_vertices,
)


@dataclass
class CriterionResult:
    name: str
    passed: bool
    detail: str
    elapsed: float

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name} ({self.elapsed:.1f}s): {self.detail}"


def _result(name: str, t0: float, passed: bool, detail: str) -> CriterionResult:
    return CriterionResult(name=name, passed=passed, detail=detail, elapsed=time.time() - t0)


# -- exact combinatorics ------------------------------------------------


def check_combinatorics() -> CriterionResult:
    t0 = time.time()
    counts = [len(enumerate_skeletons(k)) for k in (0, 1, 2)]
    problems = []
    if counts != [1, 2, 10]:
        problems.append(f"skeleton counts (k=0,1,2) = {counts}, want [1, 2, 10]")
    for n in range(1, 11):
        got = len(enumerate_plane_trees(n))
        if got != catalan_tree_count(n):
            problems.append(f"plane trees n={n}: {got} != Catalan {catalan_tree_count(n)}")
    for k in (1, 2, 3, 4):
        cap = max_skeleton_vertices(k)
        worst = max(len(s.tree.child_counts) for s in enumerate_skeletons(k))
        if worst > cap:
            problems.append(f"k={k} has a skeleton with {worst} > {cap} vertices")
    return _result(
        "combinatorics",
        t0,
        not problems,
        "; ".join(problems) or f"counts {counts}, Catalan through n=10, vertex caps hold",
    )


# -- brute-force diagram oracle ----------------------------------------


def _lookup(field, pts: np.ndarray) -> np.ndarray:
    """Vectorized field lookup with zero outside the stored box."""
    idx = pts + field.radius
    side = 2 * field.radius + 1
    ok = np.all((idx >= 0) & (idx < side), axis=-1)
    out = np.zeros(pts.shape[:-1])
    if np.any(ok):
        out[ok] = field.values[tuple(idx[ok].T)]
    return out


def brute_diagram(skel, pins, n: int, dim: int) -> float:
    """Exhaustive diagram sum: free vertices range over the full support
    box.  Independent of the tree DP; supports up to two free vertices,
    which covers every skeleton of order <= 3."""
    tree = skel.tree
    nv = len(tree.child_counts)
    vertex_pin = {}
    for j, v in enumerate(skel.labels):
        p = tuple(int(c) for c in pins[j])
        if vertex_pin.setdefault(v, p) != p:
            return 0.0  # one vertex pinned to two distinct points
    free = [v for v in range(nv) if v not in vertex_pin]
    if len(free) > 2:
        raise ValueError(f"oracle handles <= 2 free vertices, got {len(free)}")
    parents = tree.parents
    edges = [(parents[v], v) for v in range(1, nv)]
    G = truncated_green(dim, n)

    def gv(a, b):
        diff = np.asarray(b, dtype=np.int64) - np.asarray(a, dtype=np.int64)
        return float(_lookup(G, diff.reshape(1, -1))[0])

    scalar = 1.0
    for u, v in edges:
        if u in vertex_pin and v in vertex_pin:
            scalar *= gv(vertex_pin[u], vertex_pin[v])
    if not free or scalar == 0.0:
        return scalar
    box = np.array(
        list(itertools.product(range(-2 * n, 2 * n + 1), repeat=dim)), dtype=np.int64
    )
    factors = []  # per free vertex: product of edges into pinned vertices
    for f in free:
        fac = np.ones(len(box))
        for u, v in edges:
            if u == f and v in vertex_pin:
                fac *= _lookup(G, np.asarray(vertex_pin[v]) - box)
            elif v == f and u in vertex_pin:
                fac *= _lookup(G, box - np.asarray(vertex_pin[u]))
        factors.append(fac)
    if len(free) == 1:
        return scalar * float(np.sum(factors[0]))
    cross = None
    for u, v in edges:
        if u in free and v in free:
            diff = box[None, :, :] - box[:, None, :]
            cross = _lookup(G, diff)
    if cross is None:
        return scalar * float(np.sum(factors[0])) * float(np.sum(factors[1]))
    return scalar * float(factors[0] @ cross @ factors[1])


def _pin_pattern(order: int, dim: int, spread: bool):
    """Deterministic pin sets: all zeros, or small staggered offsets."""
    pins = []
    for j in range(order + 1):
        vec = np.zeros(dim, dtype=np.int64)
        if spread:
            vec[0] = ((-1) ** j) * (j % 3)
            if dim > 1:
                vec[1] = j % 2
        pins.append(vec)
    return pins


def check_diagram_brute_force() -> CriterionResult:
    t0 = time.time()
    worst = 0.0
    checked = 0
    problems = []
    for dim in (1, 2):
        for n in (2, 3, 4):
            for k in (1, 2, 3):
                for skel in enumerate_skeletons(k):
                    for spread in (False, True):
                        pins = _pin_pattern(k, dim, spread)
                        dp = evaluate_truncated(skel, pins, n, dim).value
                        brute = brute_diagram(skel, pins, n, dim)
                        scale = max(abs(brute), 1e-30)
                        rel = abs(dp - brute) / scale
                        worst = max(worst, rel)
                        checked += 1
                        if rel > 1e-12:
                            problems.append(
                                f"{skel.encode()} d={dim} n={n} spread={spread}: "
                                f"dp={dp!r} brute={brute!r}"
                            )
    cherry = Skeleton(tree=PlaneTree(child_counts=(1, 2, 0, 0)), labels=(0, 2, 3))
    v = evaluate_truncated(cherry, [np.zeros(1, dtype=np.int64)] * 3, 2, 1).value
    if abs(v - 13 / 32) > 1e-14:
        problems.append(f"cherry value {v!r} != 13/32")
    return _result(
        "diagram-brute-force",
        t0,
        not problems,
        "; ".join(problems[:3])
        or f"{checked} diagram evaluations match brute force, worst rel {worst:.2e}; "
        f"cherry = 13/32",
    )


def check_recursion_grid() -> CriterionResult:
    t0 = time.time()
    problems = []
    for k in (2, 3, 4):
        for dim in (1, 2, 3, 4):
            rep = check_recursion(k, 8, dim)
            if not rep.passed:
                problems.append(f"recursion k={k} d={dim}: rel {rep.worst_relative:.2e}")
    for k in (2, 3):
        for dim in (1, 2, 3, 4):
            rep = noninjective_reduction_check(k, 8, dim)
            if not rep.passed:
                problems.append(f"noninjective k={k} d={dim}: rel {rep.worst_relative:.2e}")
    return _result(
        "recursion-inequality",
        t0,
        not problems,
        "; ".join(problems) or "recursion k<=4 and noninjective reduction k<=3 hold on d<=4 grids",
    )


# -- Monte Carlo vs exact engines ---------------------------------------


def check_first_moment_identity(episodes: int = 10**6) -> CriterionResult:
    t0 = time.time()
    cfg = EpisodeConfig(dim=3, offspring=binary_offspring(), max_generation=32, seed=404)
    est = estimate_joint_moments(cfg, [(0, 0, 0)], 1, episodes)
    exact = 1.0 + truncated_green(3, 32).origin_value()
    gap = abs(est.value - exact)
    tol = 3 * est.std_error
    return _result(
        "first-moment-identity",
        t0,
        gap <= tol,
        f"MC {est.value:.5f} vs exact {exact:.5f}, gap {gap:.2e} vs 3se {tol:.2e}",
    )


def d5_reference_sweep(episodes: int = 10**6, seed: int = 505) -> dict:
    """One pass of d=5 geometric episodes with generous caps, feeding
    both the moment-equality and the tail-shape checks."""
    cfg = EpisodeConfig(
        dim=5,
        offspring=geometric_offspring(),
        max_generation=1 << 17,
        max_particles=1 << 27,
        seed=seed,
    )
    thresholds = np.arange(2, 21, 2)
    hits = np.zeros(len(thresholds), dtype=np.int64)
    total = 0
    truncated = 0
    s1 = s2 = s4 = 0.0
    chunk = 1 << 19
    while total < episodes:
        take = min(chunk, episodes - total)
        batch = run_batch(cfg, take, first_episode=total)
        L = batch.local_times[:, 0].astype(np.float64)
        total += take
        truncated += int(batch.truncated.sum())
        s1 += float(L.sum())
        s2 += float((L**2).sum())
        s4 += float((L**4).sum())
        for i, th in enumerate(thresholds):
            hits[i] += int(np.sum(L >= th))
    frac = truncated / total
    mean, second, fourth = s1 / total, s2 / total, s4 / total
    tail = TailEstimate(
        thresholds=thresholds,
        probs=hits / total,
        ci_half_widths=np.array([wilson_interval(int(h), total)[1] for h in hits]),
        episodes=total,
        hit_counts=hits,
        truncation_fraction=frac,
        site=(0, 0, 0, 0, 0),
    )
    return {
        "episodes": total,
        "truncation_fraction": frac,
        "moment1": mean,
        "moment1_se": math.sqrt(max(second - mean**2, 0.0) / total),
        "moment1_margin": math.sqrt(second * frac),
        "moment2": second,
        "moment2_se": math.sqrt(max(fourth - second**2, 0.0) / total),
        "moment2_margin": math.sqrt(fourth * frac),
        "tail": tail,
    }


def check_high_dim_equality(episodes: int = 10**6, sweep: dict = None) -> CriterionResult:
    t0 = time.time()
    if sweep is None:
        sweep = d5_reference_sweep(episodes)
    problems = []
    if sweep["truncation_fraction"] >= 1e-4:
        problems.append(f"truncation fraction {sweep['truncation_fraction']:.2e} >= 1e-4")
    geo = geometric_offspring()
    details = []
    for order, tol in ((1, 1e-2), (2, 5e-2)):
        req = MomentRequest(
            dim=5, offspring=geo, points=((0,) * 5,) * order, limit_tol=tol
        )
        diagram = exact_moment(req)
        mc = sweep[f"moment{order}"]
        allowance = (
            3 * sweep[f"moment{order}_se"]
            + sweep[f"moment{order}_margin"]
            + diagram.error_bound
        )
        gap = abs(mc - diagram.value)
        details.append(
            f"k={order}: MC {mc:.4f} vs diagram {diagram.value:.4f} "
            f"(gap {gap:.3f} vs allowance {allowance:.3f})"
        )
        if gap > allowance:
            problems.append(details[-1])
    return _result(
        "high-dim-moment-equality",
        t0,
        not problems,
        "; ".join(problems) or "; ".join(details),
    )


def check_truncated_bound(episodes: int = 10**6) -> CriterionResult:
    t0 = time.time()
    problems = []
    details = []
    for dim in (1, 2):
        for n in (4, 8, 16):
            cfg = EpisodeConfig(
                dim=dim, offspring=binary_offspring(), max_generation=n, seed=660 + 10 * dim + n
            )
            origin = (0,) * dim
            est = estimate_joint_moments(cfg, [origin, origin], 2, episodes)
            bound = second_moment_bound(dim, n, binary_offspring())
            slack = bound + 3 * est.std_error - est.value
            details.append(f"d={dim} n={n}: MC {est.value:.3f} <= bound {bound:.3f}")
            if slack < 0:
                problems.append(
                    f"d={dim} n={n}: MC {est.value:.4f} > bound {bound:.4f} + 3se"
                )
    return _result(
        "truncated-second-moment-bound",
        t0,
        not problems,
        "; ".join(problems) or "; ".join(details),
    )


def check_moment_scaling() -> CriterionResult:
    t0 = time.time()
    problems = []
    details = []
    for dim, want in ((1, 2.0), (2, 1.0)):
        ns = (16, 32, 64, 128, 256, 512)
        vals = [second_moment_bound(dim, n, binary_offspring()) for n in ns]
        slope = float(
            np.polyfit([math.log(n) for n in ns], [math.log(v) for v in vals], 1)[0]
        )
        details.append(f"d={dim} exponent {slope:.3f}")
        if abs(slope - want) > 0.2:
            problems.append(f"d={dim}: exponent {slope:.3f} not within {want} +- 0.2")
    ratios = [
        second_moment_bound(3, n, binary_offspring()) / math.log(n + 1) for n in (16, 32, 64)
    ]
    spread = max(ratios) / min(ratios)
    details.append(f"d=3 bound/log(n+1) spread x{spread:.2f}")
    if spread > 3.0:
        problems.append(f"d=3 ratio spread {spread:.2f} exceeds factor 3")
    return _result(
        "second-moment-scaling",
        t0,
        not problems,
        "; ".join(problems) or "; ".join(details),
    )


def check_kolmogorov(episodes: int = 10**6) -> CriterionResult:
    t0 = time.time()
    cfg = EpisodeConfig(dim=1, offspring=binary_offspring(), max_generation=256, seed=808)
    table = estimate_survival(cfg, [16, 32, 64, 128, 256], episodes)
    rep = kolmogorov_check(table, tolerance=0.1)
    return _result(
        "kolmogorov-constant",
        t0,
        rep.passed,
        f"r=256: r*P*sigma^2/2 = {rep.final_value:.4f} (tolerance 0.1)",
    )


_TAIL_CONFIGS = {
    1: dict(
        offspring="binary",
        cap=4096,
        max_particles=1 << 22,
        thresholds=(32, 64, 128, 256, 512, 1024),
        episodes=10**6,
        seed=111,
        slope=-2 / 3,
        tol=0.1,
    ),
    2: dict(
        offspring="geometric",
        cap=4096,
        max_particles=1 << 22,
        thresholds=(32, 64, 128, 256, 512, 1024),
        episodes=10**6,
        seed=223,
        slope=-1.0,
        tol=0.12,
    ),
    3: dict(
        offspring="geometric",
        cap=16384,
        max_particles=1 << 22,
        thresholds=(8, 12, 16, 24, 32, 48, 64),
        episodes=10**7,
        seed=303,
        slope=-2.0,
        tol=0.25,
    ),
}


def _offspring_by_name(name: str):
    return {"binary": binary_offspring, "geometric": geometric_offspring}[name]()


def tail_run(dim: int, episodes: int = None):
    """Frozen tail configuration for one dimension; returns the raw
    TailEstimate and its power-law fit."""
    c = _TAIL_CONFIGS[dim]
    cfg = EpisodeConfig(
        dim=dim,
        offspring=_offspring_by_name(c["offspring"]),
        max_generation=c["cap"],
        max_particles=c["max_particles"],
        seed=c["seed"],
    )
    tail = estimate_tail(cfg, c["thresholds"], episodes or c["episodes"])
    return tail, fit_power(tail)


def check_tail_exponents(episode_scale: float = 1.0) -> CriterionResult:
    t0 = time.time()
    problems = []
    details = []
    for dim, c in _TAIL_CONFIGS.items():
        episodes = max(int(c["episodes"] * episode_scale), 10**5)
        tail, fit = tail_run(dim, episodes)
        details.append(f"d={dim}: slope {fit.slope:.3f} (want {c['slope']:.3f} +- {c['tol']})")
        if abs(fit.slope - c["slope"]) > c["tol"]:
            problems.append(details[-1])
        floor = 10 * float(np.min(tail.probs[tail.probs > 0], initial=1.0))
        if tail.truncation_fraction > floor:
            problems.append(
                f"d={dim}: truncation fraction {tail.truncation_fraction:.1e} "
                f"above 10x smallest tail point {floor:.1e}"
            )
    return _result(
        "tail-exponents",
        t0,
        not problems,
        "; ".join(problems) or "; ".join(details),
    )


def check_d4_tail_shape(episodes: int = 2 * 10**6) -> CriterionResult:
    t0 = time.time()
    law = explicit_offspring({0: 31 / 32, 32: 1 / 32})
    cfg = EpisodeConfig(
        dim=4, offspring=law, max_generation=8192, max_particles=1 << 24, seed=78
    )
    tail = estimate_tail(cfg, [9, 16, 25, 36, 49, 64, 81, 100], episodes)
    cmp_ = fit_stretched(tail)
    r2 = cmp_.stretched.r_squared
    ok = cmp_.preferred == "stretched_exp" and r2 >= 0.98
    others = {m: f"{f.r_squared:.4f}" for m, f in cmp_.fits.items() if m != "stretched_exp"}
    return _result(
        "d4-tail-shape",
        t0,
        ok,
        f"stretched R2 {r2:.4f} preferred={cmp_.preferred} (others {others})",
    )


@dataclass
class _Series:
    """Minimal (x, y) pair carrier accepted by the fitters."""

    thresholds: np.ndarray
    probs: np.ndarray
    ci_half_widths: np.ndarray = None


def check_d5_tail_shape(episodes: int = 10**6, sweep: dict = None) -> CriterionResult:
    t0 = time.time()
    if sweep is None:
        sweep = d5_reference_sweep(episodes)
    problems = []
    detail_tail = ""
    try:
        exp_fit = fit_exponential(sweep["tail"])
    except FitError as exc:
        problems.append(f"exponential fit failed: {exc}")
    else:
        detail_tail = (
            f"log P linear in n: R2 {exp_fit.r_squared:.4f} rate {exp_fit.rate:.3f} "
            f"({exp_fit.n_points} usable points)"
        )
        if exp_fit.r_squared < 0.98:
            problems.append(f"log-linearity R2 {exp_fit.r_squared:.4f} < 0.98")
    radii = (4, 5, 6, 8, 10, 12, 16, 20)  # below r=4 lattice corrections tilt the slope
    greens = _Series(
        thresholds=np.array(radii, dtype=float),
        probs=np.array([green_value(5, (r, 0, 0, 0, 0)) for r in radii]),
    )
    gfit = fit_power(greens)
    if abs(gfit.slope + 3.0) > 0.3:
        problems.append(f"Green decay slope {gfit.slope:.3f} not within -3 +- 0.3")
    return _result(
        "d5-tail-shape",
        t0,
        not problems,
        "; ".join(problems) or f"{detail_tail}; Green slope {gfit.slope:.3f}",
    )


def check_paley_zygmund(trials: int = 10**4, seed: int = 1212) -> CriterionResult:
    t0 = time.time()
    rng = np.random.default_rng(seed)
    failures = 0
    worst = None
    for _ in range(trials):
        m = int(rng.integers(2, 6))
        atoms = np.round(rng.uniform(0.0, 10.0, size=m), 3)
        atoms[rng.integers(0, m)] = 0.0  # keep an atom at zero often
        if np.all(atoms == 0.0):
            atoms[0] = 1.0
        probs = rng.dirichlet(np.ones(m))
        for p in (2.0, 3.0):
            for eps in (0.0, 0.25, 0.5):
                rep = pz_verify(atoms, probs, p, eps)
                if not rep.passed:
                    failures += 1
                    worst = (atoms.tolist(), probs.tolist(), p, eps, rep)
    return _result(
        "paley-zygmund",
        t0,
        failures == 0,
        f"{failures} violations in {trials * 6} checks" + (f"; first {worst}" if worst else ""),
    )


def check_bubble_lemmas() -> CriterionResult:
    t0 = time.time()
    problems = []
    pts5 = (
        [(r, 0, 0, 0, 0) for r in range(0, 11)]
        + [(r, r, 0, 0, 0) for r in range(1, 6)]
        + [(2, 2, 2, 2, 2)]
    )
    vals = []
    for x in pts5:
        xa = np.asarray(x)
        vals.append(bubble_sum(5, xa, 16) * float(graph_weight(xa)) ** 3)
    lo, hi = min(vals), max(vals)
    if not (0.2 <= lo and hi <= 3.0):
        problems.append(f"d=5 bubble window [{lo:.3f}, {hi:.3f}] escapes [0.2, 3.0]")
    worst_ratio = 0.0
    for k in range(5):
        for x in [(r, 0, 0, 0) for r in (0, 1, 2, 3, 5, 8, 12)] + [
            (r, r, 0, 0) for r in (1, 2, 4, 6)
        ]:
            xa = np.asarray(x)
            gx = float(graph_weight(xa))
            structure = gx**-2.0 / (k + 1) * (k + 1 + math.log(gx)) ** (k + 1)
            ratio = log_bubble_sum(xa, k, 40) / structure
            worst_ratio = max(worst_ratio, ratio)
    if worst_ratio > 2.5:
        problems.append(f"d=4 log-bubble needs constant {worst_ratio:.3f} > calibrated 2.5")
    return _result(
        "bubble-lemmas",
        t0,
        not problems,
        "; ".join(problems)
        or f"d=5 window [{lo:.3f}, {hi:.3f}] in [0.2, 3.0]; d=4 constant {worst_ratio:.3f} <= 2.5",
    )


# -- orchestration ------------------------------------------------------

# the subcommand that reproduces each criterion's ingredients by hand
REPRODUCED_BY = {
    "combinatorics": "brwlab skeletons --k 4 --dump",
    "diagram-brute-force": "brwlab diagrams (eval directives, k <= 3)",
    "recursion-inequality": "brwlab diagrams (recursion / noninjective directives)",
    "first-moment-identity": "brwlab moments (moment dim=3 truncation=32 mc-episodes=...)",
    "high-dim-moment-equality": "brwlab moments (moment dim=5 mc-episodes=...)",
    "truncated-second-moment-bound": "brwlab moments (truncated requests with mc-episodes)",
    "second-moment-scaling": "brwlab moments (truncation ladder requests)",
    "kolmogorov-constant": "brwlab simulate (mode = survival)",
    "tail-exponents": "brwlab tails (d = 1, 2, 3 configs)",
    "d4-tail-shape": "brwlab tails (d = 4 config)",
    "d5-tail-shape": "brwlab tails (d = 5 config)",
    "paley-zygmund": "library only: analysis.pz_verify",
    "bubble-lemmas": "brwlab diagrams (bubble / logbubble directives)",
}

QUICK = (
    check_combinatorics,
    check_diagram_brute_force,
    check_recursion_grid,
    check_first_moment_identity,
    check_truncated_bound,
    check_moment_scaling,
    check_kolmogorov,
    check_paley_zygmund,
    check_bubble_lemmas,
)


def run_all(profile: str = "quick"):
    """Run the validation suite; returns the list of CriterionResult."""
    if profile not in ("quick", "full"):
        raise ConfigurationError(f"unknown profile {profile!r}; use quick or full")
    results = [fn() for fn in QUICK]
    if profile == "full":
        sweep = d5_reference_sweep()
        results.append(check_high_dim_equality(sweep=sweep))
        results.append(check_d5_tail_shape(sweep=sweep))
        results.append(check_tail_exponents())
        results.append(check_d4_tail_shape())
    return results
