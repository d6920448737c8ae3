"""End-to-end command-line flows and exit codes."""

import json

import numpy as np
import pytest

from screid.checkpoint import load_checkpoint
from screid.cli import main
from screid.synthdata import load_dataset

TINY = {
    "num_identities": 4,
    "num_cameras": 2,
    "images_per_identity_camera": 4,
    "image_height": 16,
    "image_width": 8,
    "identity_bands": 4,
    "encoder_hidden": 32,
    "encoder_channels": 16,
    "feature_height": 4,
    "feature_width": 4,
    "num_stripes": 4,
    "key_dim": 16,
    "n_plus": 2,
    "n_minus": 8,
    "epochs": 3,
    "init_epochs": 1,
    "batch_size": 8,
    "seed": 0,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(TINY))
    data = root / "data.scrd"
    assert main(["gen-data", "--config", str(config), "--out", str(data)]) == 0
    return root, str(config), str(data)


@pytest.fixture(scope="module")
def trained(workspace):
    root, config, data = workspace
    ckpt = root / "run.ckpt"
    metrics = root / "run.metrics.csv"
    code = main(
        ["train", "--config", config, "--data", data, "--out", str(ckpt), "--metrics", str(metrics)]
    )
    assert code == 0
    return root, config, data, str(ckpt), str(metrics)


# -- gen-data ------------------------------------------------------------------


def test_gen_data_writes_a_loadable_dataset(workspace, capsys):
    _, config, data = workspace
    splits = load_dataset(data)
    assert len(splits.train) == 16
    assert len(splits.query) == 8
    assert len(splits.gallery) == 8


def test_gen_data_is_byte_deterministic(workspace, tmp_path):
    _, config, data = workspace
    again = tmp_path / "again.scrd"
    assert main(["gen-data", "--config", config, "--out", str(again)]) == 0
    with open(data, "rb") as a, open(again, "rb") as b:
        assert a.read() == b.read()


def test_gen_data_seed_override_changes_bytes(workspace, tmp_path):
    _, config, data = workspace
    other = tmp_path / "other.scrd"
    assert main(["gen-data", "--config", config, "--seed", "5", "--out", str(other)]) == 0
    with open(data, "rb") as a, open(other, "rb") as b:
        assert a.read() != b.read()


def test_gen_data_without_output_is_a_usage_error(workspace, capsys):
    _, config, _ = workspace
    assert main(["gen-data", "--config", config]) == 1
    assert "--out" in capsys.readouterr().err


# -- train ---------------------------------------------------------------------


def test_train_writes_checkpoint_metrics_and_figure(trained):
    root, _, _, ckpt, metrics = trained
    loaded = load_checkpoint(ckpt)
    assert loaded.epochs_completed == 3
    assert loaded.run_config.n_plus == 2
    lines = open(metrics).read().splitlines()
    assert lines[0] == "epoch,phase,loss_global,loss_local,loss_total"
    assert len(lines) == 1 + 3
    rows = [line.split(",") for line in lines[1:]]
    assert [r[1] for r in rows] == ["init", "train", "train"]
    # repr round-trip: CSV floats equal the checkpoint's records exactly
    for row, record in zip(rows, loaded.records):
        assert int(row[0]) == record.epoch
        assert float(row[4]) == record.loss_total
    assert (root / "run.metrics.png").exists()


def test_train_is_byte_deterministic(trained, tmp_path):
    _, config, data, ckpt, metrics = trained
    ckpt2 = tmp_path / "again.ckpt"
    metrics2 = tmp_path / "again.csv"
    code = main(
        ["train", "--config", config, "--data", data, "--out", str(ckpt2),
         "--metrics", str(metrics2), "--no-figures"]
    )
    assert code == 0
    assert ckpt2.read_bytes() == open(ckpt, "rb").read()
    assert metrics2.read_text().splitlines()[1:] == open(metrics).read().splitlines()[1:]


def test_train_no_figures_skips_the_png(workspace, tmp_path):
    _, config, data = workspace
    ckpt = tmp_path / "nf.ckpt"
    metrics = tmp_path / "nf.csv"
    code = main(
        ["train", "--config", config, "--data", data, "--out", str(ckpt),
         "--metrics", str(metrics), "--no-figures"]
    )
    assert code == 0
    assert not (tmp_path / "nf.png").exists()


def test_train_resume_matches_uninterrupted_run(trained, tmp_path):
    _, config, data, ckpt, _ = trained
    part = tmp_path / "part.ckpt"
    code = main(
        ["train", "--config", config, "--data", data, "--out", str(part),
         "--epochs", "2", "--no-figures"]
    )
    assert code == 0
    resumed = tmp_path / "resumed.ckpt"
    code = main(
        ["train", "--resume", str(part), "--data", data, "--out", str(resumed),
         "--epochs", "3", "--no-figures"]
    )
    assert code == 0
    assert resumed.read_bytes() == open(ckpt, "rb").read()


def test_resume_refuses_config_and_seed_flags(trained, tmp_path, capsys):
    _, config, data, ckpt, _ = trained
    out = tmp_path / "x.ckpt"
    assert main(["train", "--resume", ckpt, "--config", config, "--data", data, "--out", str(out)]) == 1
    assert main(["train", "--resume", ckpt, "--seed", "1", "--data", data, "--out", str(out)]) == 1
    assert "from the checkpoint" in capsys.readouterr().err


def test_resume_already_complete_is_a_config_error(trained, tmp_path, capsys):
    _, _, data, ckpt, _ = trained
    out = tmp_path / "x.ckpt"
    code = main(["train", "--resume", ckpt, "--data", data, "--out", str(out), "--no-figures"])
    assert code == 2
    assert "already covers" in capsys.readouterr().err


def test_resume_on_mismatched_dataset_is_a_data_error(trained, tmp_path, capsys):
    _, config, data, ckpt, _ = trained
    other = tmp_path / "other.scrd"
    cfg = dict(TINY, num_identities=5)
    cfg_path = tmp_path / "other.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(other)]) == 0
    out = tmp_path / "x.ckpt"
    code = main(
        ["train", "--resume", ckpt, "--data", str(other), "--out", str(out),
         "--epochs", "4", "--no-figures"]
    )
    assert code == 3
    assert "trained on 16 samples" in capsys.readouterr().err


def test_train_missing_dataset_is_a_data_error(workspace, tmp_path, capsys):
    _, config, _ = workspace
    code = main(
        ["train", "--config", config, "--data", str(tmp_path / "absent.scrd"),
         "--out", str(tmp_path / "x.ckpt"), "--no-figures"]
    )
    assert code == 3


@pytest.mark.filterwarnings("ignore:invalid value encountered")
@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_train_numerical_blowup_exits_4(workspace, tmp_path, capsys):
    _, _, data = workspace
    cfg = dict(TINY, tau=1e-300, batch_size=4)
    cfg_path = tmp_path / "hot.json"
    cfg_path.write_text(json.dumps(cfg))
    code = main(
        ["train", "--config", str(cfg_path), "--data", data,
         "--out", str(tmp_path / "x.ckpt"), "--no-figures"]
    )
    assert code == 4
    assert "non-finite" in capsys.readouterr().err


def test_invalid_config_value_exits_2(workspace, tmp_path, capsys):
    _, _, data = workspace
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps(dict(TINY, beta=2.0)))
    code = main(
        ["gen-data", "--config", str(cfg_path), "--out", str(tmp_path / "x.scrd")]
    )
    assert code == 2
    assert "beta" in capsys.readouterr().err


# -- eval ----------------------------------------------------------------------


def test_eval_prints_report_json(trained, capsys):
    _, _, data, ckpt, _ = trained
    assert main(["eval", "--ckpt", ckpt, "--data", data]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"rank1", "rank5", "rank10", "mAP", "num_queries", "num_excluded"}
    assert 0.0 <= report["rank1"] <= report["rank5"] <= report["rank10"] <= 1.0
    assert 0.0 <= report["mAP"] <= 1.0
    assert report["num_queries"] + report["num_excluded"] == 8


def test_eval_stdout_is_deterministic(trained, capsys):
    _, _, data, ckpt, _ = trained
    assert main(["eval", "--ckpt", ckpt, "--data", data]) == 0
    first = capsys.readouterr().out
    assert main(["eval", "--ckpt", ckpt, "--data", data]) == 0
    assert capsys.readouterr().out == first


def test_eval_report_file_and_figure(trained, tmp_path, capsys):
    _, _, data, ckpt, _ = trained
    report_path = tmp_path / "report.json"
    assert main(["eval", "--ckpt", ckpt, "--data", data, "--report", str(report_path)]) == 0
    out = capsys.readouterr().out
    assert report_path.read_text() == out
    assert (tmp_path / "report.png").exists()


def test_eval_flag_variants_change_the_numbers(trained, capsys):
    _, _, data, ckpt, _ = trained
    assert main(["eval", "--ckpt", ckpt, "--data", data]) == 0
    base = json.loads(capsys.readouterr().out)
    assert main(["eval", "--ckpt", ckpt, "--data", data, "--include-same-camera"]) == 0
    with_same = json.loads(capsys.readouterr().out)
    assert main(["eval", "--ckpt", ckpt, "--data", data, "--append-local"]) == 0
    appended = json.loads(capsys.readouterr().out)
    # same-camera gallery images are near-duplicates of the query, so
    # including them can only help rank-1 on this tiny set
    assert with_same["rank1"] >= base["rank1"]
    assert appended != base


def test_eval_missing_checkpoint_is_a_data_error(workspace, tmp_path, capsys):
    _, _, data = workspace
    assert main(["eval", "--ckpt", str(tmp_path / "absent.ckpt"), "--data", data]) == 3


# -- ablate ---------------------------------------------------------------------


def test_ablate_sweep_csv_rows_and_stdout_copy(workspace, tmp_path, capsys):
    _, config, data = workspace
    out = tmp_path / "sweep.csv"
    code = main(
        ["ablate", "--config", config, "--data", data, "--param", "n_plus",
         "--values", "1,2,3", "--out", str(out), "--no-figures"]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    text = out.read_text()
    assert stdout == text
    lines = text.splitlines()
    assert lines[0] == "parameter,value,seeds,rank1,mAP"
    assert len(lines) == 4
    assert [line.split(",")[:3] for line in lines[1:]] == [
        ["n_plus", "1", "0"],
        ["n_plus", "2", "0"],
        ["n_plus", "3", "0"],
    ]
    for line in lines[1:]:
        _, _, _, rank1, m_ap = line.split(",")
        assert 0.0 <= float(rank1) <= 1.0
        assert 0.0 <= float(m_ap) <= 1.0


def test_ablate_seed_averaging_labels_the_seeds(workspace, tmp_path, capsys):
    _, config, data = workspace
    out = tmp_path / "seeds.csv"
    code = main(
        ["ablate", "--config", config, "--data", data, "--param", "beta",
         "--values", "0.5", "--seeds", "0,1", "--out", str(out), "--no-figures"]
    )
    assert code == 0
    capsys.readouterr()
    row = out.read_text().splitlines()[1].split(",")
    assert row[:3] == ["beta", "0.5", "0;1"]


def test_ablate_table4_preset(workspace, tmp_path, capsys):
    _, config, data = workspace
    out = tmp_path / "t4.csv"
    code = main(
        ["ablate", "--config", config, "--data", data, "--preset", "table4",
         "--out", str(out), "--no-figures"]
    )
    assert code == 0
    capsys.readouterr()
    lines = out.read_text().splitlines()
    assert [line.split(",")[1] for line in lines[1:]] == ["global-only", "local-only", "joint"]
    assert (tmp_path / "t4.png").exists() is False


def test_ablate_writes_the_sweep_figure(workspace, tmp_path, capsys):
    _, config, data = workspace
    out = tmp_path / "fig.csv"
    code = main(
        ["ablate", "--config", config, "--data", data, "--param", "beta",
         "--values", "0.0,1.0", "--out", str(out)]
    )
    assert code == 0
    capsys.readouterr()
    assert (tmp_path / "fig.png").exists()


def test_ablate_table5_needs_enough_candidates(workspace, tmp_path, capsys):
    # 7/500 cannot fit a 16-sample training set
    _, config, data = workspace
    code = main(
        ["ablate", "--config", config, "--data", data, "--preset", "table5",
         "--out", str(tmp_path / "t5.csv"), "--no-figures"]
    )
    assert code == 2
    assert "exceeds" in capsys.readouterr().err


def test_ablate_usage_errors(workspace, tmp_path, capsys):
    _, config, data = workspace
    out = str(tmp_path / "x.csv")
    assert main(["ablate", "--config", config, "--data", data, "--out", out]) == 1
    assert main(
        ["ablate", "--config", config, "--data", data, "--preset", "table4",
         "--param", "beta", "--values", "1", "--out", out]
    ) == 1
    assert main(
        ["ablate", "--config", config, "--data", data, "--param", "epochs",
         "--values", "1", "--out", out]
    ) == 1
    assert main(
        ["ablate", "--config", config, "--data", data, "--param", "beta",
         "--values", "a,b", "--out", out]
    ) == 1
    assert main(
        ["ablate", "--config", config, "--data", data, "--param", "beta",
         "--values", "0.5", "--seeds", "x", "--out", out]
    ) == 1
    capsys.readouterr()


# -- top level -------------------------------------------------------------------


def test_missing_subcommand_exits_1(capsys):
    assert main([]) == 1
    assert "missing subcommand" in capsys.readouterr().err


def test_unknown_flag_exits_1(capsys):
    assert main(["train", "--wat"]) == 1
    capsys.readouterr()


def test_unknown_subcommand_exits_1(capsys):
    assert main(["dance"]) == 1
    capsys.readouterr()
