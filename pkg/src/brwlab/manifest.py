"""Experiment manifests and run-directory persistence.

A manifest pins everything a run depends on: the subcommand, its full
configuration, the schema version, and a sha256 over the canonical JSON
of exactly those fields.  Replaying a manifest reproduces result files
bit for bit for combinatorial and diagram commands, and statistically
(identically, given the stored seed) for Monte Carlo ones.  The id and
timestamp are bookkeeping and deliberately stay outside the hash.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .errors import ConfigurationError

SCHEMA_VERSION = 1


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(subcommand: str, config: dict) -> str:
    body = canonical_json(
        {"subcommand": subcommand, "config": config, "schema_version": SCHEMA_VERSION}
    )
    return hashlib.sha256(body.encode()).hexdigest()


@dataclass(frozen=True)
class ExperimentManifest:
    id: str
    subcommand: str
    config: dict
    schema_version: int
    created: str
    hash: str
    version: str

    @classmethod
    def create(cls, subcommand: str, config: dict, run_id: str = None) -> "ExperimentManifest":
        h = config_hash(subcommand, config)
        if run_id is None:
            run_id = f"{subcommand}-{h[:12]}"
        return cls(
            id=run_id,
            subcommand=subcommand,
            config=config,
            schema_version=SCHEMA_VERSION,
            created=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            hash=h,
            version=__version__,
        )

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc
        missing = {f.name for f in dataclasses.fields(cls)} - raw.keys()
        if missing:
            raise ConfigurationError(f"manifest {path} lacks fields {sorted(missing)}")
        m = cls(**{f.name: raw[f.name] for f in dataclasses.fields(cls)})
        expected = config_hash(m.subcommand, m.config)
        if m.hash != expected:
            raise ConfigurationError(
                f"manifest hash mismatch: stored {m.hash[:12]}, computed {expected[:12]}"
            )
        return m


class RunDirectory:
    """Plain-file persistence for one experiment: manifest.json,
    results.jsonl (one record per logical batch), summary.csv, and any
    extra plot-data files."""

    def __init__(self, root, manifest: ExperimentManifest):
        self.path = Path(root) / manifest.id
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest = manifest
        (self.path / "manifest.json").write_text(
            json.dumps(dataclasses.asdict(manifest), indent=2, sort_keys=True) + "\n"
        )
        self._results = self.path / "results.jsonl"
        self._results.write_text("")

    def append_record(self, record: dict) -> None:
        record = dict(record, manifest_hash=self.manifest.hash)
        with self._results.open("a") as fh:
            fh.write(canonical_json(record) + "\n")

    def write_summary(self, rows, header) -> None:
        with (self.path / "summary.csv").open("w", newline="") as fh:
            fh.write(f"# manifest {self.manifest.hash}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)

    def write_columns(self, name: str, x, y, labels=("x", "y")) -> None:
        """Two-column whitespace table, gnuplot-style."""
        lines = [f"# manifest {self.manifest.hash}", f"# {labels[0]} {labels[1]}"]
        lines += [f"{a:.10g} {b:.10g}" for a, b in zip(x, y)]
        (self.path / name).write_text("\n".join(lines) + "\n")
