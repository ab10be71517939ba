"""Metric emission: a stable CSV schema, summary tables, and manifests.

The CSV is the reproducibility contract: rows are sorted by (trial,
round, method) regardless of production order, floats are written with
shortest round-trip repr, and the wall_time_ms column is reserved (always
0) so reruns of the same config are byte-identical. Measured wall time
goes to the manifest sidecar, which also pins the config hash and seed.
"""

import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import FullConfig

CSV_HEADER = (
    "trial,round,method,test_accuracy,train_loss,"
    "decoded_count,retransmissions,wall_time_ms"
)


def sort_records(records) -> list:
    return sorted(records, key=lambda r: (r.trial, r.round_index, r.method))


def format_row(record) -> str:
    return ",".join(
        (
            str(record.trial),
            str(record.round_index),
            record.method,
            repr(float(record.test_accuracy)),
            repr(float(record.train_loss)),
            str(record.decoded_count),
            str(record.retransmissions),
            "0",
        )
    )


def render_csv(records) -> str:
    lines = [CSV_HEADER]
    lines.extend(format_row(r) for r in sort_records(records))
    return "\n".join(lines) + "\n"


def write_csv(records, path) -> Path:
    path = Path(path)
    path.write_text(render_csv(records), encoding="ascii", newline="\n")
    return path


def _mean_stderr(values: np.ndarray) -> tuple:
    mean = float(values.mean())
    if values.size < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / np.sqrt(values.size))


def summarize(records) -> str:
    """Per-(round, method) mean +/- stderr of accuracy and loss over trials."""
    if not records:
        return "no records\n"
    by_key: dict = {}
    for r in records:
        by_key.setdefault((r.round_index, r.method), []).append(r)
    methods = sorted({m for _, m in by_key})
    width = max(len(m) for m in methods)
    lines = [
        f"{'round':>5}  {'method':<{width}}  "
        f"{'test_accuracy':<19}  {'train_loss':<19}  {'decoded':>7}"
    ]
    for round_index, method in sorted(by_key):
        group = by_key[(round_index, method)]
        acc, acc_se = _mean_stderr(np.array([g.test_accuracy for g in group]))
        loss, loss_se = _mean_stderr(np.array([g.train_loss for g in group]))
        decoded = np.mean([g.decoded_count for g in group])
        lines.append(
            f"{round_index:>5}  {method:<{width}}  "
            f"{acc:.4f} +/- {acc_se:.4f}  {loss:.4f} +/- {loss_se:.4f}  "
            f"{decoded:>7.2f}"
        )
    return "\n".join(lines) + "\n"


def final_round_accuracy(records) -> dict:
    """Mean final-round test accuracy per method, for quick comparisons."""
    last = max(r.round_index for r in records)
    out: dict = {}
    for r in records:
        if r.round_index == last:
            out.setdefault(r.method, []).append(r.test_accuracy)
    return {m: float(np.mean(v)) for m, v in sorted(out.items())}


def write_manifest(path, cfg: FullConfig, outputs: dict, wall_time_s: float) -> Path:
    """Sidecar JSON pinning exactly what produced the metrics files."""
    payload = {
        "config": cfg.resolved,
        "config_hash": cfg.config_hash,
        "master_seed": cfg.experiment.master_seed,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": wall_time_s,
        "outputs": {k: str(v) for k, v in sorted(outputs.items())},
    }
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
