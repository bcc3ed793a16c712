import csv

import pytest

from mgce.cli import main


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["gen", "--out", str(out), "--samples-per-subclass", "6", "--dim", "8"]) == 0
    return out


def _train(tmp_path, dataset, name, extra=()):
    out = tmp_path / name
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data = {dataset}\nout = {out}\nepochs = 2\nbatch_size = 32\nknn = 6\n")
    assert main(["train", "--config", str(cfg), *extra]) == 0
    return out


def test_gen_then_train_writes_outputs(tmp_path, dataset):
    out = _train(tmp_path, dataset, "run")
    for f in ("checkpoint.bin", "train_log.csv", "epoch_log.csv", "partition.csv", "config.resolved"):
        assert (out / f).exists()
    assert (dataset / "config.resolved").exists()


def test_flags_override_config(tmp_path, dataset):
    out = _train(tmp_path, dataset, "run", ["--seed", "5", "--lambda", "0.5"])
    text = (out / "config.resolved").read_text()
    assert "seed = 5" in text and "lambda = 0.5" in text and "knn = 6" in text


def test_rerun_from_resolved_config_is_identical(tmp_path, dataset):
    a = _train(tmp_path, dataset, "a")
    b = tmp_path / "b"
    assert main(["train", "--config", str(a / "config.resolved"), "--out", str(b)]) == 0
    for f in ("checkpoint.bin", "train_log.csv", "epoch_log.csv", "partition.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_exit_codes(tmp_path, dataset):
    assert main(["cluster", "--data", str(dataset), "--knn", "0"]) == 1
    assert main(["train", "--nope", "1"]) == 1
    assert main([]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    assert main(["train", "--config", str(bad)]) == 1
    assert main(["train", "--data", str(tmp_path / "missing.bin"), "--out", str(tmp_path / "x")]) == 2
    assert main(["cluster", "--data", str(dataset), "--knn", "500", "--out", str(tmp_path / "c")]) == 2


def test_eval_on_perfect_partition(tmp_path, dataset, capsys):
    rows = list(csv.DictReader(open(dataset / "embeddings.labels.csv")))
    part = tmp_path / "perfect.csv"
    part.write_text("id,cluster\n" + "".join(f"{r['id']},{r['label']}\n" for r in rows))
    assert main(["eval", "--data", str(dataset), "--partition", str(part), "--out", str(tmp_path / "e")]) == 0
    assert "All/Old/New = 1.0/1.0/1.0" in capsys.readouterr().out
    assert main(["estimate-k", "--data", str(dataset), "--partition", str(part),
                 "--out", str(tmp_path / "e")]) == 0
    lines = (tmp_path / "e" / "estimate_k.csv").read_text().splitlines()
    assert lines == ["k_est,gt,err_rate", "10,10,0.0"]


def test_cluster_select_and_report(tmp_path, dataset):
    assert main(["select-knn", "--data", str(dataset), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "knn_report.csv").exists()
    assert main(["cluster", "--data", str(dataset), "--knn", "6", "--out", str(tmp_path / "c")]) == 0
    out = _train(tmp_path, dataset, "run")
    assert main(["report", "--log", str(out), "--out", str(tmp_path / "rep")]) == 0
    kg = (tmp_path / "rep" / "kg_vs_epoch.csv").read_text().splitlines()
    assert kg[0] == "epoch,kg1,kg2,kg3" and len(kg) == 4
    assert (tmp_path / "rep" / "acc_vs_epoch.csv").exists()
