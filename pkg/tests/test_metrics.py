import json

import numpy as np

from codedfl.config import build_pipeline, parse_config
from codedfl.metrics import (
    CSV_HEADER,
    final_round_accuracy,
    format_row,
    render_csv,
    sort_records,
    summarize,
    write_csv,
    write_manifest,
)
from codedfl.protocol import RoundMetrics, run_experiment


def _rec(trial=0, r=1, method="proposed", acc=0.5, loss=1.25, decoded=3, retx=0):
    return RoundMetrics(
        trial=trial, round_index=r, method=method, test_accuracy=acc,
        train_loss=loss, decoded_count=decoded, retransmissions=retx,
        failed=False,
    )


def test_sort_order():
    records = [
        _rec(trial=1, r=1, method="anon"),
        _rec(trial=0, r=2, method="proposed"),
        _rec(trial=0, r=1, method="proposed"),
        _rec(trial=0, r=1, method="anon"),
    ]
    ordered = sort_records(records)
    keys = [(r.trial, r.round_index, r.method) for r in ordered]
    assert keys == sorted(keys)


def test_row_format():
    row = format_row(_rec(acc=0.53125, loss=1.0 / 3.0))
    cells = row.split(",")
    assert cells[0:3] == ["0", "1", "proposed"]
    # repr round-trips exactly; reserved wall-time cell is always 0
    assert float(cells[3]) == 0.53125
    assert float(cells[4]) == 1.0 / 3.0
    assert cells[7] == "0"


def test_render_header_and_shape():
    text = render_csv([_rec(), _rec(r=2)])
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 3
    assert text.endswith("\n")


def test_rerun_byte_identical(tmp_path):
    cfg = parse_config(overrides={
        "experiment.num_trials": 2,
        "experiment.rounds": 3,
        "data.subset_size": 400,
        "data.test_size": 100,
    })
    pipe = build_pipeline(cfg)

    def produce(name):
        recs = run_experiment(
            cfg.experiment, pipe.model_spec, pipe.objective,
            pipe.partition, pipe.train, pipe.test,
        )
        return write_csv(recs, tmp_path / name).read_bytes()

    assert produce("a.csv") == produce("b.csv")


def test_summarize_groups_rounds():
    records = [
        _rec(trial=t, r=r, method=m, acc=0.1 * t + 0.2 * r)
        for t in range(3) for r in (1, 2) for m in ("anon", "proposed")
    ]
    table = summarize(records)
    lines = table.splitlines()
    assert "test_accuracy" in lines[0]
    assert len(lines) == 1 + 4  # 2 rounds x 2 methods
    assert "+/-" in lines[1]


def test_final_round_accuracy():
    records = [
        _rec(trial=0, r=2, method="proposed", acc=0.8),
        _rec(trial=1, r=2, method="proposed", acc=0.6),
        _rec(trial=0, r=2, method="anon", acc=0.3),
        _rec(trial=0, r=1, method="anon", acc=0.9),
    ]
    finals = final_round_accuracy(records)
    assert finals == {"anon": 0.3, "proposed": np.mean([0.8, 0.6])}


def test_manifest_contents(tmp_path):
    cfg = parse_config()
    path = write_manifest(
        tmp_path / "manifest.json", cfg,
        outputs={"metrics": tmp_path / "metrics.csv"},
        wall_time_s=1.5,
    )
    payload = json.loads(path.read_text())
    assert payload["config_hash"] == cfg.config_hash
    assert payload["master_seed"] == 0
    assert payload["wall_time_s"] == 1.5
    assert payload["outputs"]["metrics"].endswith("metrics.csv")
    assert payload["config"]["experiment"]["rounds"] == 20
