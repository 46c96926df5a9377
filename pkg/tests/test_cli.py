import csv
import json
from pathlib import Path

import numpy as np
import pytest

from metric_fixtures import DETECTION
from usdrl.checkpoint import locked
from usdrl.cli import main, split_overrides
from usdrl.config import config_keys
from usdrl.downstream.interchange import read_curve, read_ratio_probs, write_segments
from usdrl.downstream.metrics import make_segment
from usdrl.estimators import USDRL
from usdrl.skelio import DatasetManifest, load_split

TINY = Path(__file__).resolve().parents[1] / "configs" / "tiny.toml"


def run(*argv):
    return main([str(a) for a in argv])


def report(out_dir, name):
    return json.loads((Path(out_dir) / f"{name}_report.json").read_text())


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    assert run("synth", "--classes", 2, "--per-class", 4, "--frames", 12, "--joints", 5, "--videos", 2,
               "--out-dir", root) == 0
    return root / "data" / "manifest.json"


@pytest.fixture(scope="module")
def tiny_ckpt(tiny_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    assert run("pretrain", "--config", TINY, "--data", tiny_data, "--out-dir", out) == 0
    return out / "pretrain.ckpt"


def test_split_overrides():
    rest, over = split_overrides(["pretrain", "--train.epochs", "3", "--loss.tau=0.2", "--seed", "1"])
    assert rest == ["pretrain", "--seed", "1"] and over == {"train.epochs": "3", "loss.tau": "0.2"}


def test_synth_default_counts_and_bytes(tmp_path):
    assert run("synth", "--videos", 0, "--out-dir", tmp_path / "a") == 0
    assert run("synth", "--videos", 0, "--out-dir", tmp_path / "b") == 0
    m = report(tmp_path / "a", "synth")["metrics"]
    assert m["train_samples"] == 200 and m["test_samples"] == 200
    for name in ("manifest.json", "train.jsonl", "test.jsonl"):
        assert (tmp_path / "a" / "data" / name).read_bytes() == (tmp_path / "b" / "data" / name).read_bytes()
    man = DatasetManifest.load(tmp_path / "a" / "data" / "manifest.json")
    assert len({s.id for s in load_split(man, "test")}) == 200


def test_pretrain_smoke(tiny_ckpt):
    out = tiny_ckpt.parent
    rep = report(out, "pretrain")
    assert tiny_ckpt.is_file() and rep["metrics"]["steps"] >= 1
    assert set(rep) == {"command", "config_digest", "seed", "wall_time", "metrics", "artifacts"}
    lines = (out / "pretrain_log.jsonl").read_text().splitlines()
    assert len(lines) == rep["metrics"]["steps"] and "total" in json.loads(lines[0])


def test_pretrain_determinism(tiny_data, tmp_path):
    for d in ("a", "b"):
        assert run("pretrain", "--config", TINY, "--data", tiny_data, "--out-dir", tmp_path / d,
                   "--train.epochs", 2) == 0
    a, b = report(tmp_path / "a", "pretrain"), report(tmp_path / "b", "pretrain")
    assert a["config_digest"] == b["config_digest"]
    assert abs(a["metrics"]["final_loss"] - b["metrics"]["final_loss"]) <= 1e-10


def test_missing_data_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "manifest.json"
    assert run("pretrain", "--config", TINY, "--data", missing, "--out-dir", tmp_path) != 0
    assert str(missing) in capsys.readouterr().err


def test_invalid_key_lists_valid_keys(tmp_path, capsys):
    assert run("pretrain", "--train.epoch", 1, "--out-dir", tmp_path) != 0
    err = capsys.readouterr().err
    assert "train.epoch" in err and "train.epochs" in err and "loss.tau" in err


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        main(["pretrain", "--help"])
    out = capsys.readouterr().out
    assert all(k in out for k in config_keys())


def test_eval_knn_and_probe_schema(tiny_data, tiny_ckpt, tmp_path):
    for task in ("knn", "probe", "transfer"):
        assert run("eval", task, "--checkpoint", tiny_ckpt, "--data", tiny_data, "--out-dir", tmp_path) == 0
    knn = report(tmp_path, "eval_knn")
    assert knn["task"] == "knn" and 0.0 <= knn["metrics"]["top1"] <= 1.0
    assert set(report(tmp_path, "eval_transfer")["metrics"]) == {"probe_top1", "knn_top1"}


def test_eval_semi_and_ensemble(tiny_data, tiny_ckpt, tmp_path):
    assert run("eval", "semi", "--checkpoint", tiny_ckpt, "--data", tiny_data, "--out-dir", tmp_path,
               "--fraction", 0.5, "--epochs", 1) == 0
    assert report(tmp_path, "eval_semi")["metrics"]["labeled"] > 0
    assert run("eval", "ensemble", "--checkpoint", tiny_ckpt, "--data", tiny_data, "--out-dir", tmp_path) == 2
    assert run("eval", "ensemble", "--checkpoint", tiny_ckpt, "--checkpoint", tiny_ckpt, "--data", tiny_data,
               "--out-dir", tmp_path) == 0
    m = report(tmp_path, "eval_ensemble")["metrics"]
    assert m["top1"] == m["model0_top1"] == m["model1_top1"]


def test_eval_predict_refuses_non_causal(tiny_data, tiny_ckpt, tmp_path, capsys):
    assert run("eval", "predict", "--checkpoint", tiny_ckpt, "--data", tiny_data, "--out-dir", tmp_path) == 2
    assert "causal" in capsys.readouterr().err


def test_eval_predict_causal(tiny_data, tmp_path):
    assert run("pretrain", "--config", TINY, "--data", tiny_data, "--out-dir", tmp_path,
               "--encoder.causal", "true") == 0
    assert run("eval", "predict", "--checkpoint", tmp_path / "pretrain.ckpt", "--data", tiny_data,
               "--out-dir", tmp_path) == 0
    rows = read_curve(tmp_path / "predict_curve.csv")
    assert [r["ratio"] for r in rows] == pytest.approx([i / 10 for i in range(1, 11)])
    probs = read_ratio_probs(tmp_path / "predictions.jsonl")
    assert all(len(v) == 10 for v in probs.values())


def test_eval_dense_tasks(tiny_data, tiny_ckpt, tmp_path):
    for task in ("segment", "detect"):
        assert run("eval", task, "--checkpoint", tiny_ckpt, "--data", tiny_data, "--out-dir", tmp_path) == 0
    seg = report(tmp_path, "eval_segment")["metrics"]
    assert set(seg) == {"Acc", "Edit", "F1@10", "F1@25", "F1@50"}
    curve = read_curve(tmp_path / "detect_curve.csv")
    assert [r["iou"] for r in curve] == [0.3, 0.4, 0.5, 0.6, 0.7]


def test_eval_detect_fixture_files(tmp_path):
    preds, gt, *_ = DETECTION["single_hit"]
    write_segments(tmp_path / "p.jsonl", {v: [make_segment(*s) for s in segs] for v, segs in preds.items()})
    write_segments(tmp_path / "g.jsonl", {v: [make_segment(*s) for s in segs] for v, segs in gt.items()})
    assert run("eval", "detect", "--iou", 0.5, "--predictions", tmp_path / "p.jsonl", "--gt", tmp_path / "g.jsonl",
               "--out-dir", tmp_path) == 0
    assert report(tmp_path, "eval_detect")["metrics"]["mAP_a"] == 1.0


def test_export_embeddings(tiny_data, tiny_ckpt, tmp_path):
    for d in ("a", "b"):
        assert run("export-embeddings", "--checkpoint", tiny_ckpt, "--data", tiny_data, "--out-dir",
                   tmp_path / d) == 0
    path = tmp_path / "a" / "embeddings.csv"
    assert path.read_bytes() == (tmp_path / "b" / "embeddings.csv").read_bytes()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    test = load_split(DatasetManifest.load(tiny_data), "test")
    assert len(rows) == len(test) + 1
    X = USDRL.from_checkpoint(tiny_ckpt).transform(test)
    got = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
    assert np.array_equal(got, X) and rows[0][:3] == ["id", "label", "e0"]


def test_pretrain_refuses_locked_checkpoint(tiny_data, tmp_path, capsys):
    with locked(tmp_path / "pretrain.ckpt"):
        assert run("pretrain", "--config", TINY, "--data", tiny_data, "--out-dir", tmp_path) == 2
    assert "locked" in capsys.readouterr().err


def test_checkpoint_dataset_mismatch(tiny_ckpt, tmp_path, capsys):
    assert run("synth", "--classes", 2, "--per-class", 2, "--frames", 12, "--joints", 7, "--videos", 0,
               "--out-dir", tmp_path) == 0
    assert run("eval", "knn", "--checkpoint", tiny_ckpt, "--data", tmp_path / "data" / "manifest.json",
               "--out-dir", tmp_path) == 2
    assert "joints" in capsys.readouterr().err
