"""Run directories: manifest, per-seed JSONL metrics, learning-curve CSV."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash, config_to_dict

SCHEMA_VERSION = 1

RECORD_FIELDS = (
    "schema_version", "run_id", "seed", "stage", "strategy", "labeled_size", "unlabeled_size",
    "test_accuracy", "val_accuracy", "selected_count", "ood_selected_count", "ood_rejected_count",
    "in_dist_precision", "ce_term", "bt_invariance", "bt_redundancy", "wall_time_s", "weibull_fallback",
)
VOLATILE_FIELDS = ("wall_time_s", "run_id")
CURVE_COLUMNS = ("stage", "labeled_size", "mean_acc", "std_acc", "strategy")


def metrics_filename(seed) -> str:
    return f"metrics_seed{seed}.jsonl"


def record_dict(metrics, run_id) -> dict:
    raw = metrics.to_dict() if hasattr(metrics, "to_dict") else dict(metrics)
    raw.update(schema_version=SCHEMA_VERSION, run_id=run_id)
    return {k: raw.get(k) for k in RECORD_FIELDS}


def serialize_record(record: dict) -> str:
    # float repr is the shortest string that round-trips exactly to the same double
    return json.dumps(record, allow_nan=False)


def write_metrics(sink, metrics, run_id="") -> None:
    """Append one stage record to an open text sink and flush it."""
    sink.write(serialize_record(record_dict(metrics, run_id)) + "\n")
    sink.flush()


def read_metrics(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def masked_lines(path, masked=VOLATILE_FIELDS) -> list:
    out = []
    for rec in read_metrics(path):
        for k in masked:
            if k in rec:
                rec[k] = None
        out.append(serialize_record(rec))
    return out


def compare_metrics(path_a, path_b, masked=VOLATILE_FIELDS) -> bool:
    """Equality of two metrics files with the volatile fields blanked out."""
    return masked_lines(path_a, masked) == masked_lines(path_b, masked)


@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    config: dict
    metrics_paths: dict = field(default_factory=dict)  # seed -> file name
    artifact_version: str = __version__
    schema_version: int = SCHEMA_VERSION
    status: str = "running"  # running | complete | partial
    failures: dict = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: ExperimentConfig, clock=time.time) -> "RunManifest":
        data = config_to_dict(cfg)
        h = config_hash(data)
        stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime(clock()))
        return cls(f"{stamp}-{h}", h, data, {str(s): metrics_filename(s) for s in cfg.seeds})

    def write(self, run_dir) -> None:
        path = Path(run_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


class RunSink:
    """Routes stage records to ``metrics_seed<N>.jsonl`` files in a run directory."""

    def __init__(self, run_dir, run_id):
        self.run_dir = Path(run_dir)
        self.run_id = run_id
        self._files: dict = {}

    def __call__(self, metrics) -> None:
        fh = self._files.get(metrics.seed)
        if fh is None:
            fh = self._files[metrics.seed] = open(self.run_dir / metrics_filename(metrics.seed), "w")
        write_metrics(fh, metrics, self.run_id)

    def close(self) -> None:
        for fh in self._files.values():
            fh.close()
        self._files.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def collect_records(run_dirs) -> list:
    records = []
    for d in run_dirs:
        for path in sorted(Path(d).glob("metrics_seed*.jsonl")):
            records += read_metrics(path)
    return records


def curve_rows(records) -> list:
    groups: dict = {}
    for r in records:
        groups.setdefault((r["strategy"], r["stage"]), []).append(r)
    rows = []
    for (strategy, stage), rs in sorted(groups.items()):
        acc = np.array([r["test_accuracy"] for r in rs], dtype=np.float64)
        rows.append({
            "stage": stage,
            "labeled_size": float(np.mean([r["labeled_size"] for r in rs])),
            "mean_acc": float(acc.mean()),
            "std_acc": float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
            "strategy": strategy,
        })
    return rows


def export_curves(run_dirs, out_path) -> list:
    """Aggregate the metrics of one or more run directories into a CSV."""
    rows = curve_rows(collect_records(run_dirs))
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return rows
