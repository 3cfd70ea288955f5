import csv
import json

import numpy as np
import pytest

from bigantax.bigan import BiGanModel, TrainConfig
from bigantax.cli import main, sha256_file
from bigantax.features import RETURN_FIELDS

SMALL = {"n_genuine": 80, "n_fraud": 6, "months": 8}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "synth.json"
    cfg.write_text(json.dumps(SMALL))
    assert run("synth", "--config", cfg, "--seed", 4, "--out", root / "synth") == 0
    assert run("features", root / "synth" / "returns.csv", "--out", root / "feat") == 0
    assert run("train", root / "feat" / "features.csv", "--epochs", 3, "--batch-size", 16,
               "--out", root / "train") == 0
    assert run("score", root / "train" / "checkpoint.json", root / "feat" / "features.csv",
               "--labels", root / "synth" / "labels.csv", "--out", root / "score") == 0
    return root


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_outputs_and_manifest(workdir):
    man = json.loads((workdir / "synth" / "manifest.json").read_text())
    assert man["command"] == "synth" and man["seed"] == 4
    for name in ("returns.csv", "labels.csv", "config.json"):
        assert man["outputs"][name] == sha256_file(workdir / "synth" / name)
    labels = read_csv(workdir / "synth" / "labels.csv")
    assert len(labels) == 86 and sum(r["is_fraud"] == "1" for r in labels) == 6


def test_synth_is_reproducible(tmp_path, workdir):
    assert run("synth", "--config", workdir / "synth.json", "--seed", 4,
               "--out", tmp_path / "again") == 0
    for name in ("returns.csv", "labels.csv"):
        assert sha256_file(tmp_path / "again" / name) == sha256_file(workdir / "synth" / name)


def test_default_out_dir_from_env(tmp_path, monkeypatch, workdir):
    monkeypatch.setenv("BIGAN_OUT_DIR", str(tmp_path / "envruns"))
    assert run("features", workdir / "synth" / "returns.csv") == 0
    assert (tmp_path / "envruns" / "features" / "features.csv").is_file()


def test_features_gstr3b_shaped_input(tmp_path):
    p = tmp_path / "r.csv"
    rows = [",".join(RETURN_FIELDS)]
    for m in range(1, 7):
        rows.append(f"BC,2019-{m:02d},{210000 + m * 1000},190000,12000,12000,0,10100,10100,0,"
                    f"{1000 + m}")
    p.write_text("\n".join(rows) + "\n")
    assert run("features", p, "--out", tmp_path / "o") == 0
    out = read_csv(tmp_path / "o" / "features.csv")
    assert [r["taxpayer_id"] for r in out] == ["BC"]
    assert float(out[0]["ratio3"]) == pytest.approx(24000 * 6 / 1.0)


def test_features_all_short_series(tmp_path, caplog):
    p = tmp_path / "r.csv"
    p.write_text(",".join(RETURN_FIELDS) + "\nA,2020-01,1,1,1,1,1,1,1,1,1\n"
                 "B,2020-01,1,1,1,1,1,1,1,1,1\n")
    assert run("features", p, "--out", tmp_path / "o") == 0
    assert len(read_csv(tmp_path / "o" / "features.csv")) == 0
    assert [r["taxpayer_id"] for r in read_csv(tmp_path / "o" / "excluded.csv")] == ["A", "B"]
    assert "fewer than 6 months" in caplog.text


def test_corrupt_csv_exits_2(tmp_path, capsys):
    p = tmp_path / "r.csv"
    p.write_text(",".join(RETURN_FIELDS) + "\nA,2020-01,1,1,1,x,1,1,1,1,1\n")
    assert run("features", p, "--out", tmp_path / "o") == 2
    assert "line 2" in capsys.readouterr().err


def test_missing_input_exits_2(tmp_path):
    assert run("features", tmp_path / "nope.csv", "--out", tmp_path / "o") == 2


def test_train_metrics_per_epoch(workdir):
    lines = (workdir / "train" / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in lines] == [1, 2, 3]
    model = BiGanModel.load(workdir / "train" / "checkpoint.json")
    assert model.epochs_done == 3 and model.stats is not None


def test_train_alignment_flag(tmp_path, workdir):
    assert run("train", workdir / "feat" / "features.csv", "--epochs", 1, "--batch-size", 16,
               "--alignment", "euclidean", "--out", tmp_path / "t") == 0
    cfg = json.loads((tmp_path / "t" / "config.json").read_text())
    assert cfg["alignment"] == "euclidean"


def test_train_resume_continues(tmp_path, workdir):
    assert run("train", workdir / "feat" / "features.csv", "--epochs", 2, "--batch-size", 16,
               "--resume", workdir / "train" / "checkpoint.json", "--out", tmp_path / "r") == 0
    lines = (tmp_path / "r" / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in lines] == [4, 5]


def test_train_resume_dim_mismatch_exits_2(tmp_path, workdir):
    BiGanModel.create(TrainConfig(data_dim=5)).save(tmp_path / "five.json")
    assert run("train", workdir / "feat" / "features.csv", "--epochs", 1,
               "--resume", tmp_path / "five.json", "--out", tmp_path / "r") == 2


@pytest.mark.parametrize("flags", [["--epochs", 0], ["--batch-size", -1], ["--latent-dim", 0]])
def test_train_bad_config_exits_1(tmp_path, workdir, flags):
    assert run("train", workdir / "feat" / "features.csv", *flags, "--out", tmp_path / "t") == 1


def test_unparseable_flag_exits_1(workdir):
    with pytest.raises(SystemExit) as e:
        run("train", workdir / "feat" / "features.csv", "--epochs", "ten")
    assert e.value.code == 1


def test_score_summary_matches_report(workdir):
    summary = json.loads((workdir / "score" / "summary.json").read_text())
    assert {"Q1", "Q3", "IQR", "threshold", "flagged_count", "total_count",
            "roc_auc"} <= set(summary)
    rows = read_csv(workdir / "score" / "report.csv")
    assert summary["flagged_count"] == sum(r["flagged"] == "true" for r in rows)
    assert summary["total_count"] == len(rows)
    assert [int(r["rank"]) for r in rows] == list(range(1, len(rows) + 1))
    scores = np.array([float(r["score"]) for r in rows])
    assert np.all(np.diff(scores) >= 0)
    assert np.sum(scores < summary["threshold"]) == summary["flagged_count"]


def test_compare_single_seed(tmp_path, workdir, capsys):
    assert run("compare", workdir / "feat" / "features.csv", "--seeds", "3", "--epochs", 2,
               "--batch-size", 16, "--out", tmp_path / "c") == 0
    rows = read_csv(tmp_path / "c" / "comparison.csv")
    assert len(rows) == 1 and rows[0]["seed"] == "3"
    assert "cosine wins" in capsys.readouterr().out
    curves = read_csv(tmp_path / "c" / "curves.csv")
    assert len(curves) == 4


def test_compare_zero_epochs_exits_1(tmp_path, workdir):
    assert run("compare", workdir / "feat" / "features.csv", "--epochs", 0,
               "--out", tmp_path / "c") == 1


def test_replay_check(tmp_path, workdir):
    assert run("replay", workdir / "train" / "manifest.json", "--check",
               "--out", tmp_path / "rt") == 0
    assert run("replay", workdir / "score" / "manifest.json", "--check",
               "--out", tmp_path / "rs") == 0
    assert (sha256_file(tmp_path / "rs" / "report.csv")
            == sha256_file(workdir / "score" / "report.csv"))


def test_replay_detects_changed_input(tmp_path, workdir):
    feats = tmp_path / "features.csv"
    feats.write_bytes((workdir / "feat" / "features.csv").read_bytes())
    assert run("train", feats, "--epochs", 1, "--batch-size", 16, "--out", tmp_path / "t") == 0
    feats.write_text(feats.read_text() + "\n")
    assert run("replay", tmp_path / "t" / "manifest.json", "--out", tmp_path / "r") == 2


def test_replay_bad_manifest(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("[1, 2]")
    assert run("replay", p) == 1
