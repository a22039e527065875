"""CLI verbs, exit codes, and experiment drivers at miniature scale."""
import csv
import json
from pathlib import Path

import pytest

from gnndt.cli import EXIT_CONFIG, EXIT_OK, main
from gnndt.data import TrajectoryDataset
from gnndt.experiments import (CSV_COLUMNS, ExperimentSpec, run_experiment,
                               write_report)

MINI = {
    "horizon_T": 12,
    "num_trajectories": 3,
    "eval_scenarios": 2,
    "num_chargers": 2,
    "model": {"context_K": 2, "embed_dim": 8, "attention_heads": 2,
              "decoder_layers": 1, "gnn_hidden_dim": 4, "gnn_feature_dim": 2,
              "gcn_layers_state": 1, "gcn_layers_action": 1,
              "max_episode_steps": 16},
    "train": {"total_steps": 3, "batch_size": 2, "warmup_steps": 1},
}


def _config_file(tmp_path, **extra) -> str:
    doc = dict(MINI)
    doc.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_gen_data_cli(tmp_path):
    out = tmp_path / "run"
    code = main(["gen-data", "--config", _config_file(tmp_path),
                 "--out", str(out), "--seed", "1", "--policy", "random"])
    assert code == EXIT_OK
    ds = TrajectoryDataset.load(out / "dataset.jsonl.gz")
    assert ds.meta.count == 3
    assert ds.meta.source_mix == {"random": 1.0}


def test_train_cli_writes_results(tmp_path):
    out = tmp_path / "run"
    code = main(["train", "--config", _config_file(tmp_path),
                 "--out", str(out)])
    assert code == EXIT_OK
    with open(out / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and list(rows[0]) == CSV_COLUMNS
    algos = {r["algorithm"] for r in rows}
    assert {"gnndt", "random", "bau", "cafap"} <= algos
    assert (out / "results_summary.json").exists()
    assert (out / "experiment.json").exists()


def test_eval_cli_round_trip(tmp_path):
    out = tmp_path / "run"
    ckpt = tmp_path / "model.ckpt"
    assert main(["train", "--config", _config_file(tmp_path),
                 "--out", str(out), "--checkpoint", str(ckpt)]) == EXIT_OK
    out2 = tmp_path / "eval"
    assert main(["eval", "--config", _config_file(tmp_path),
                 "--out", str(out2), "--checkpoint", str(ckpt)]) == EXIT_OK
    assert (out2 / "results.csv").exists()


def test_report_cli(tmp_path, capsys):
    rows = [dict(zip(CSV_COLUMNS, ["a", 0, 1, 0, 100, 0, 0, -1.0, 0.001])),
            dict(zip(CSV_COLUMNS, ["a", 1, 1, 0, 100, 0, 0, -3.0, 0.001]))]
    path = write_report(rows, tmp_path)
    assert main(["report", str(path)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "-2.00" in text and "1.41" in text


def test_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad)]) == EXIT_CONFIG
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"bogus_field": 1}))
    assert main(["train", "--config", str(unknown)]) == EXIT_CONFIG


def test_missing_checkpoint_is_config_error(tmp_path):
    code = main(["eval", "--config", _config_file(tmp_path),
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG


def test_write_report_empty_grid(tmp_path):
    path = write_report([], tmp_path)
    lines = Path(path).read_text().strip().splitlines()
    assert lines == [",".join(CSV_COLUMNS)]


def test_write_report_deterministic(tmp_path):
    rows = [dict(zip(CSV_COLUMNS, ["x", 0, 1, 2, 90, 0, -1, -5.0, 0.01]))]
    p1 = write_report(rows, tmp_path / "a")
    p2 = write_report(rows, tmp_path / "b")
    assert Path(p1).read_bytes() == Path(p2).read_bytes()


def test_ablate_experiment(tmp_path):
    spec = ExperimentSpec(mode="ablate", seed=0, out_dir=str(tmp_path / "ab"),
                          options={"variants": ["flat_dt", "full"]}, **MINI)
    result = run_experiment(spec)
    algos = {r["algorithm"] for r in result["rows"]}
    assert {"flat_dt", "full"} <= algos


def test_scale_experiment_crosses_sizes(tmp_path):
    spec = ExperimentSpec(mode="scale", seed=0, out_dir=str(tmp_path / "sc"),
                          options={"eval_sizes": [1, 3]}, **MINI)
    result = run_experiment(spec)
    algos = {r["algorithm"] for r in result["rows"]}
    assert "gnndt_n1" in algos and "gnndt_n3" in algos


def test_unknown_mode_rejected(tmp_path):
    with pytest.raises(ValueError):
        run_experiment(ExperimentSpec(mode="bogus", out_dir=str(tmp_path)))
