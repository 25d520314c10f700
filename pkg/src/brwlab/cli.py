"""Batch front door.

Subcommands take plain-text request/config files, hash them into an
experiment manifest, and write results under a run directory:
manifest.json, results.jsonl (one record per logical batch, each
embedding the manifest hash), summary.csv, and plot-ready column files.
Replaying a stored manifest with --replay reruns the identical
configuration into the identical directory; non-statistical commands
reproduce their outputs bit for bit.

Request grammar (one directive per line, # comments allowed):

  diagrams:
    eval <skeleton> dim=2 n=4 pins=0,0;1,0;0,1
    limit <skeleton> dim=5 pins=0,0,0,0,0;... tol=1e-4 [assert-convergent]
    field k=2 dim=2 n=16
    recursion k=3 dim=2 n=8
    noninjective k=2 dim=3 n=8
    bubble dim=5 x=3,0,0,0,0 box=16
    logbubble x=3,0,0,0 k=2 box=40

  moments:
    moment dim=3 offspring=binary points=0,0,0 truncation=32 mc-episodes=100000

  simulate / tails (key = value pairs):
    mode = tails | survival | blocks     (simulate only; tails implies tails)
    dim = 1
    offspring = binary | geometric:0.5 | poisson:1.0 | explicit:0:0.5,2:0.5
    episodes = 1000000
    seed = 111
    max-generation = 4096
    max-particles = 4194304
    thresholds = 32,64,128,256           (tails)
    r-values = 16,32,64,128,256          (survival)
    block-r = 16                         (blocks)

Exit codes: 0 pass, 1 check failure, 2 bad configuration, 3 resource
guard.  Errors print a machine-readable JSON diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .analysis import fit_stretched, wilson_interval
from .diagrams import (
    check_recursion,
    evaluate_limit,
    evaluate_truncated,
    maximal_diagram_field,
    noninjective_reduction_check,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    FitError,
    ResourceLimitError,
)
from .lattice import bubble_sum, log_bubble_sum
from .manifest import ExperimentManifest, RunDirectory
from .moments import MomentRequest, exact_moment
from .offspring import make_distribution
from .simulate import EpisodeConfig, TailEstimate, estimate_joint_moments, run_batch
from .skeletons import Skeleton, enumerate_skeletons
from . import validate as validation

_CHUNK = 1 << 19


# -- request parsing ----------------------------------------------------


def _read_lines(path) -> list:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines:
        raise ConfigurationError(f"{path} contains no directives")
    return lines


def _parse_kv(tokens, line: str) -> dict:
    opts = {}
    for tok in tokens:
        if "=" not in tok:
            if tok == "assert-convergent":
                opts[tok] = "true"
                continue
            raise ConfigurationError(f"bad token {tok!r} in line {line!r}")
        key, _, val = tok.partition("=")
        opts[key] = val
    return opts


def _parse_config(path) -> dict:
    cfg = {}
    for line in _read_lines(path):
        if "=" not in line:
            raise ConfigurationError(f"expected key = value, got {line!r}")
        key, _, val = line.partition("=")
        cfg[key.strip()] = val.strip()
    return cfg


def _point(text: str) -> tuple:
    try:
        return tuple(int(c) for c in text.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"bad lattice point {text!r}") from exc


def _points(text: str) -> list:
    return [_point(p) for p in text.split(";") if p]


def _ints(text: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise ConfigurationError(f"bad integer list {text!r}") from exc


def _offspring_from_spec(spec: str):
    if spec.startswith("explicit:"):
        table = {}
        body = spec[len("explicit:"):]
        for pair in body.split(","):
            k, _, v = pair.partition(":")
            try:
                table[int(k)] = float(v)
            except ValueError as exc:
                raise ConfigurationError(f"bad explicit offspring entry {pair!r}") from exc
        return make_distribution(table)
    return make_distribution(spec)


def _episode_config(cfg: dict) -> EpisodeConfig:
    try:
        dim = int(cfg["dim"])
        offspring = _offspring_from_spec(cfg["offspring"])
    except KeyError as exc:
        raise ConfigurationError(f"config lacks required key {exc}") from exc
    kwargs = dict(dim=dim, offspring=offspring)
    if "start" in cfg:
        kwargs["start"] = _point(cfg["start"])
    if "tracked" in cfg:
        kwargs["tracked_sites"] = tuple(_points(cfg["tracked"]))
    for key, field in (
        ("max-generation", "max_generation"),
        ("max-particles", "max_particles"),
        ("seed", "seed"),
    ):
        if key in cfg:
            kwargs[field] = int(cfg[key])
    return EpisodeConfig(**kwargs)


def _episodes(cfg: dict) -> int:
    n = int(cfg.get("episodes", 100000))
    if n <= 0:
        raise ConfigurationError(f"episodes must be positive, got {n}")
    return n


# -- subcommands --------------------------------------------------------


def cmd_skeletons(args) -> int:
    counts = {}
    for k in range(args.k_min, args.k + 1):
        skels = enumerate_skeletons(k)
        counts[k] = len(skels)
        print(f"k={k}: {len(skels)} skeletons")
        if args.dump:
            for s in skels:
                print(f"  {s.encode()}")
    if args.out:
        manifest = ExperimentManifest.create(
            "skeletons", {"k_min": args.k_min, "k_max": args.k, "dump": bool(args.dump)}
        )
        run = RunDirectory(args.out, manifest)
        for k, count in counts.items():
            run.append_record({"k": k, "count": count})
        rows = []
        for k in counts:
            for s in enumerate_skeletons(k):
                rows.append([k, s.encode(), s.is_injective])
        run.write_summary(rows, ["k", "encoding", "injective"])
        print(f"wrote {run.path}")
    return 0


def _diagram_record(line: str) -> dict:
    head, *tokens = line.split()
    if head in ("recursion", "noninjective"):
        opts = _parse_kv(tokens, line)
        k, dim, n = int(opts["k"]), int(opts["dim"]), int(opts["n"])
        fn = check_recursion if head == "recursion" else noninjective_reduction_check
        rep = fn(k, n, dim)
        return {
            "kind": head,
            "k": k,
            "dim": dim,
            "n": n,
            "passed": rep.passed,
            "min_slack": rep.min_slack,
            "worst_relative": rep.worst_relative,
            "points_checked": rep.points_checked,
        }
    if head == "field":
        opts = _parse_kv(tokens, line)
        k, dim, n = int(opts["k"]), int(opts["dim"]), int(opts["n"])
        field = maximal_diagram_field(k, n, dim)
        return {
            "kind": "field",
            "k": k,
            "dim": dim,
            "n": n,
            "radius": field.radius,
            "origin_value": field.origin_value(),
            "_field": field,
        }
    if head == "bubble":
        opts = _parse_kv(tokens, line)
        x = np.asarray(_point(opts["x"]))
        value = bubble_sum(int(opts["dim"]), x, int(opts["box"]))
        return {"kind": "bubble", "x": x.tolist(), "value": value}
    if head == "logbubble":
        opts = _parse_kv(tokens, line)
        x = np.asarray(_point(opts["x"]))
        value = log_bubble_sum(x, int(opts["k"]), int(opts["box"]))
        return {"kind": "logbubble", "x": x.tolist(), "k": int(opts["k"]), "value": value}
    if head in ("eval", "limit"):
        if not tokens:
            raise ConfigurationError(f"missing skeleton encoding in {line!r}")
        encoding, *tokens = tokens
        skel = Skeleton.parse(encoding)
        opts = _parse_kv(tokens, line)
        dim = int(opts["dim"])
        pins = _points(opts["pins"])
        if head == "eval":
            dv = evaluate_truncated(skel, pins, int(opts["n"]), dim)
        else:
            dv = evaluate_limit(
                skel,
                pins,
                dim,
                tol=float(opts.get("tol", 1e-6)),
                assert_convergent="assert-convergent" in opts,
            )
        return {
            "kind": head,
            "skeleton": encoding,
            "dim": dim,
            "pins": [list(p) for p in pins],
            "value": dv.value,
            "error_bound": dv.truncation_error_bound,
            "n_used": dv.n_used,
            "empty": dv.empty,
        }
    raise ConfigurationError(f"unknown diagram directive {head!r}")


def _manifest_for(args, subcommand: str, build_config):
    """Either reload a stored manifest verbatim (so a replay rewrites
    byte-identical files) or hash a fresh config."""
    if args.replay:
        manifest = ExperimentManifest.load(args.replay)
        if manifest.subcommand != subcommand:
            raise ConfigurationError(
                f"manifest is for {manifest.subcommand!r}, not {subcommand!r}"
            )
        return manifest
    return ExperimentManifest.create(subcommand, build_config())


def cmd_diagrams(args) -> int:
    manifest = _manifest_for(
        args, "diagrams", lambda: {"requests": _read_lines(args.request)}
    )
    lines = manifest.config["requests"]
    run = RunDirectory(args.out, manifest)
    failed = False
    rows = []
    for i, line in enumerate(lines):
        record = _diagram_record(line)
        field = record.pop("_field", None)
        if field is not None:
            stem = f"field_{i:03d}_k{record['k']}_d{record['dim']}_n{record['n']}"
            field.save(run.path / f"{stem}.bin")
            field.to_csv(run.path / f"{stem}.csv")
            record["files"] = [f"{stem}.bin", f"{stem}.csv"]
        record["request"] = line
        run.append_record(record)
        shown = next(record[key] for key in ("value", "passed", "origin_value") if key in record)
        print(f"[{i}] {line} -> {shown}")
        rows.append([i, record["kind"], line, shown])
        if record.get("passed") is False:
            failed = True
    run.write_summary(rows, ["index", "kind", "request", "result"])
    print(f"wrote {run.path}")
    return 1 if failed else 0


def _moment_record(line: str) -> dict:
    head, *tokens = line.split()
    if head != "moment":
        raise ConfigurationError(f"unknown moments directive {head!r}")
    opts = _parse_kv(tokens, line)
    dim = int(opts["dim"])
    offspring = _offspring_from_spec(opts["offspring"])
    points = _points(opts["points"])
    truncation = int(opts["truncation"]) if "truncation" in opts else None
    request = MomentRequest(
        dim=dim,
        offspring=offspring,
        points=tuple(points),
        start=_point(opts["start"]) if "start" in opts else None,
        truncation=truncation,
        limit_tol=float(opts.get("tol", 1e-6)),
        assert_convergent="assert-convergent" in opts,
    )
    exact = exact_moment(request)
    record = {
        "kind": "moment",
        "dim": dim,
        "offspring": opts["offspring"],
        "points": [list(p) for p in points],
        "truncation": truncation,
        "exact": exact.value,
        "mode": exact.mode,
        "error_bound": exact.error_bound,
    }
    episodes = int(opts.get("mc-episodes", 0))
    if episodes > 0:
        cap = truncation if truncation is not None else int(opts.get("max-generation", 4096))
        cfg = EpisodeConfig(
            dim=dim,
            offspring=offspring,
            start=request.start,
            tracked_sites=tuple(dict.fromkeys([tuple(request.start)] + points)),
            max_generation=cap,
            max_particles=int(opts.get("max-particles", 1 << 22)),
            seed=int(opts.get("seed", 0)),
        )
        est = estimate_joint_moments(cfg, points, len(points), episodes)
        record.update(
            mc=est.value,
            mc_std_error=est.std_error,
            mc_episodes=episodes,
            mc_truncation_fraction=est.truncation_fraction,
            mc_truncation_margin=est.truncation_margin,
        )
    return record


def cmd_moments(args) -> int:
    manifest = _manifest_for(
        args, "moments", lambda: {"requests": _read_lines(args.request)}
    )
    lines = manifest.config["requests"]
    run = RunDirectory(args.out, manifest)
    rows = []
    for i, line in enumerate(lines):
        record = _moment_record(line)
        record["request"] = line
        run.append_record(record)
        mc = record.get("mc")
        side = "" if mc is None else f"  mc {mc:.6g} +- {3 * record['mc_std_error']:.2g} (3se)"
        print(f"[{i}] {line} -> {record['mode']} {record['exact']:.6g}{side}")
        rows.append([i, line, record["exact"], record["mode"], mc])
    run.write_summary(rows, ["index", "request", "exact", "mode", "mc"])
    print(f"wrote {run.path}")
    return 0


def _run_chunked(cfg: EpisodeConfig, episodes: int, window=None):
    done = 0
    while done < episodes:
        take = min(_CHUNK, episodes - done)
        yield run_batch(cfg, take, first_episode=done, window=window)
        done += take


def _tails_payload(cfg_dict: dict, run: RunDirectory):
    """Shared by simulate(mode=tails) and tails: chunked episodes,
    per-batch records, and the aggregated tail table."""
    cfg = _episode_config(cfg_dict)
    episodes = _episodes(cfg_dict)
    if "thresholds" not in cfg_dict:
        raise ConfigurationError("tails mode needs thresholds = a,b,c")
    thresholds = np.asarray(sorted(_ints(cfg_dict["thresholds"])), dtype=np.int64)
    hits = np.zeros(len(thresholds), dtype=np.int64)
    total = truncated = 0
    for batch in _run_chunked(cfg, episodes):
        L = batch.local_times[:, 0]
        batch_hits = np.array([int(np.sum(L >= t)) for t in thresholds])
        hits += batch_hits
        total += batch.n_episodes
        truncated += int(batch.truncated.sum())
        run.append_record(
            {
                "kind": "batch",
                "first_episode": batch.first_episode,
                "episodes": batch.n_episodes,
                "hits": batch_hits.tolist(),
                "truncated": int(batch.truncated.sum()),
            }
        )
    probs = hits / total
    ci = np.array([wilson_interval(int(h), total)[1] for h in hits])
    return TailEstimate(
        thresholds=thresholds,
        probs=probs,
        ci_half_widths=ci,
        episodes=total,
        hit_counts=hits,
        truncation_fraction=truncated / total,
        site=tuple(cfg.tracked_sites[0]),
    )


def _write_tail_outputs(tail, run: RunDirectory) -> None:
    keep = tail.probs > 0
    logp = np.log(tail.probs[keep])
    n = tail.thresholds[keep].astype(float)
    run.write_columns("tail_vs_n.dat", n, logp, labels=("n", "log_p"))
    run.write_columns("tail_vs_sqrt_n.dat", np.sqrt(n), logp, labels=("sqrt_n", "log_p"))
    rows = [
        [int(t), int(h), p, c]
        for t, h, p, c in zip(tail.thresholds, tail.hit_counts, tail.probs, tail.ci_half_widths)
    ]
    run.write_summary(rows, ["threshold", "hits", "p_hat", "ci_half_width"])


def cmd_simulate(args) -> int:
    manifest = _manifest_for(args, "simulate", lambda: _parse_config(args.config))
    cfg_dict = manifest.config
    run = RunDirectory(args.out, manifest)
    mode = cfg_dict.get("mode", "tails")
    if mode == "tails":
        tail = _tails_payload(cfg_dict, run)
        _write_tail_outputs(tail, run)
        run.append_record(
            {
                "kind": "tail",
                "thresholds": tail.thresholds.tolist(),
                "p_hat": tail.probs.tolist(),
                "truncation_fraction": tail.truncation_fraction,
            }
        )
        print(
            f"tails: {tail.episodes} episodes, truncation fraction "
            f"{tail.truncation_fraction:.2e}"
        )
    elif mode == "survival":
        cfg = _episode_config(cfg_dict)
        episodes = _episodes(cfg_dict)
        if not cfg.offspring.is_critical:
            raise ConfigurationError("survival normalization assumes a critical law")
        if "r-values" not in cfg_dict:
            raise ConfigurationError("survival mode needs r-values = a,b,c")
        r_values = np.asarray(sorted(_ints(cfg_dict["r-values"])), dtype=np.int64)
        if r_values[-1] > cfg.max_generation:
            raise ConfigurationError("deepest r exceeds max-generation")
        hits = np.zeros(len(r_values), dtype=np.int64)
        total = 0
        for batch in _run_chunked(cfg, episodes):
            batch_hits = np.array([int(np.sum(batch.survival_depth >= r)) for r in r_values])
            hits += batch_hits
            total += batch.n_episodes
            run.append_record(
                {
                    "kind": "batch",
                    "first_episode": batch.first_episode,
                    "episodes": batch.n_episodes,
                    "hits": batch_hits.tolist(),
                }
            )
        sigma2 = cfg.offspring.variance
        probs = hits / total
        normalized = r_values * probs * sigma2 / 2.0
        rows = [
            [int(r), int(h), p, nv]
            for r, h, p, nv in zip(r_values, hits, probs, normalized)
        ]
        run.write_summary(rows, ["r", "hits", "p_hat", "r_p_sigma2_over_2"])
        run.write_columns(
            "kolmogorov.dat", r_values.astype(float), normalized, labels=("r", "normalized")
        )
        run.append_record(
            {"kind": "survival", "r_values": r_values.tolist(), "p_hat": probs.tolist()}
        )
        print(f"survival: r={int(r_values[-1])} normalized {normalized[-1]:.4f}")
    elif mode == "blocks":
        cfg = _episode_config(cfg_dict)
        episodes = _episodes(cfg_dict)
        r = int(cfg_dict.get("block-r", 0))
        if r <= 0:
            raise ConfigurationError("blocks mode needs block-r = r > 0")
        if 2 * r > cfg.max_generation:
            raise ConfigurationError("block window [r, 2r] exceeds max-generation")
        count_sum = 0.0
        positives = total = 0
        for batch in _run_chunked(cfg, episodes, window=(r, 2 * r)):
            w = batch.window_counts
            count_sum += float(w.sum())
            positives += int(np.sum(w > 0))
            total += batch.n_episodes
            run.append_record(
                {
                    "kind": "batch",
                    "first_episode": batch.first_episode,
                    "episodes": batch.n_episodes,
                    "window_total": float(w.sum()),
                    "positive": int(np.sum(w > 0)),
                }
            )
        cond_mean = count_sum / positives if positives else math.nan
        run.write_summary(
            [[r, total, positives, cond_mean]],
            ["r", "episodes", "positive_episodes", "conditional_mean"],
        )
        run.append_record(
            {"kind": "blocks", "r": r, "conditional_mean": cond_mean, "positives": positives}
        )
        print(f"blocks: r={r} conditional mean {cond_mean:.4f} over {positives} positives")
    else:
        raise ConfigurationError(f"unknown mode {mode!r}; use tails, survival, or blocks")
    print(f"wrote {run.path}")
    return 0


def cmd_tails(args) -> int:
    manifest = _manifest_for(args, "tails", lambda: _parse_config(args.config))
    cfg_dict = manifest.config
    run = RunDirectory(args.out, manifest)
    tail = _tails_payload(cfg_dict, run)
    _write_tail_outputs(tail, run)
    comparison = fit_stretched(tail)
    fit_record = {
        "kind": "fit",
        "preferred": comparison.preferred,
        "truncation_fraction": tail.truncation_fraction,
        "episodes": tail.episodes,
        "models": {
            name: {
                "slope": f.slope,
                "intercept": f.intercept,
                "r_squared": f.r_squared,
                "n_points": f.n_points,
                "n_dropped": f.n_dropped,
            }
            for name, f in comparison.fits.items()
        },
    }
    run.append_record(fit_record)
    (run.path / "fit.json").write_text(
        json.dumps(dict(fit_record, manifest_hash=manifest.hash), indent=2, sort_keys=True)
        + "\n"
    )
    power = comparison.fits["power"]
    print(
        f"tails: {tail.episodes} episodes; preferred model {comparison.preferred}; "
        f"power slope {power.slope:.4f} (R2 {power.r_squared:.4f})"
    )
    print(f"wrote {run.path}")
    return 0


def cmd_validate(args) -> int:
    results = validation.run_all(args.profile)
    run = None
    if args.out:
        manifest = ExperimentManifest.create("validate", {"profile": args.profile})
        run = RunDirectory(args.out, manifest)
    for res in results:
        print(res.line())
        via = validation.REPRODUCED_BY.get(res.name, "")
        if via:
            print(f"       via: {via}")
        if run is not None:
            run.append_record(
                {
                    "kind": "criterion",
                    "name": res.name,
                    "passed": res.passed,
                    "elapsed": res.elapsed,
                    "detail": res.detail,
                    "via": via,
                }
            )
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed ({args.profile} profile)")
    if run is not None:
        run.write_summary(
            [[r.name, r.passed, f"{r.elapsed:.1f}"] for r in results],
            ["criterion", "passed", "seconds"],
        )
        print(f"wrote {run.path}")
    return 0 if passed == len(results) else 1


# -- entry point --------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brwlab",
        description="Critical branching random walk laboratory: exact skeleton "
        "diagrams, Monte Carlo tails, and the validation suite.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("skeletons", help="enumerate skeletons and dump encodings")
    p.add_argument("--k", type=int, default=2, help="largest order to enumerate")
    p.add_argument("--k-min", type=int, default=0)
    p.add_argument("--dump", action="store_true", help="print one encoding per line")
    p.add_argument("--out", default=None, help="run directory root (optional)")
    p.set_defaults(func=cmd_skeletons)

    for name, fn, help_text in (
        ("diagrams", cmd_diagrams, "evaluate diagrams, fields, and inequality checks"),
        ("moments", cmd_moments, "exact and Monte Carlo moments side by side"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("request", nargs="?", help="request file (one directive per line)")
        p.add_argument("--replay", default=None, help="rerun a stored manifest.json")
        p.add_argument("--out", default="runs", help="run directory root")
        p.add_argument("--workers", type=int, default=1, help=argparse.SUPPRESS)
        p.set_defaults(func=fn)

    for name, fn, help_text in (
        ("simulate", cmd_simulate, "episode batches: tails, survival, or block means"),
        ("tails", cmd_tails, "tail estimation plus model fits and plot data"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", nargs="?", help="config file (key = value lines)")
        p.add_argument("--replay", default=None, help="rerun a stored manifest.json")
        p.add_argument("--out", default="runs", help="run directory root")
        p.add_argument(
            "--workers",
            type=int,
            default=1,
            help="parallelism bound; results are independent of it",
        )
        p.set_defaults(func=fn)

    p = sub.add_parser("validate", help="run the acceptance checks")
    p.add_argument("--profile", choices=("quick", "full"), default="quick")
    p.add_argument("--out", default=None, help="run directory root (optional)")
    p.add_argument("--workers", type=int, default=1, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print(json.dumps({"error": "config", "message": "workers must be >= 1"}), file=sys.stderr)
        return 2
    needs_input = args.command in ("diagrams", "moments", "simulate", "tails")
    if needs_input:
        source = getattr(args, "request", None) or getattr(args, "config", None)
        if source is None and not args.replay:
            print(
                json.dumps(
                    {"error": "config", "message": f"{args.command} needs a file or --replay"}
                ),
                file=sys.stderr,
            )
            return 2
    try:
        return args.func(args)
    except (ConfigurationError, DomainError, FitError, DivergenceError) as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except ResourceLimitError as exc:
        print(json.dumps({"error": "resource", "message": str(exc)}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
