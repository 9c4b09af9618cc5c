import csv
import json
import os
import signal
import subprocess
import urllib.request

import pytest

FLORA = os.environ.get("FLORA_BIN", "flora")


def run(*args, cwd=None):
    return subprocess.run([FLORA, *args], capture_output=True, text=True, cwd=cwd, timeout=600)


def first_line(out):
    return out.splitlines()[0]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("trained")
    args = ["train", "--arch", "mini_mobilenet", "--data", "synth:4x8x32", "--optimizer", "sgd",
            "--lr", "0.05", "--epochs", "200", "--seed", "1"]
    a = run(*args, "--out", str(d / "a.ckpt"), "--history", str(d / "a.json"))
    assert a.returncode == 0, a.stderr
    b = run(*args, "--out", str(d / "b.ckpt"))
    assert b.returncode == 0, b.stderr
    return d


@pytest.mark.parametrize("arch,head,total", [
    ("mobilenet", "gap", "3,245,264"),
    ("densenet121", "gap", "7,053,904"),
    ("xception", "gap", "20,894,264"),
    ("mobilenet", "flatten", "4,031,696"),
    ("densenet121", "flatten", "7,840,336"),
])
def test_paramcount_totals(arch, head, total):
    r = run("paramcount", "--arch", arch, "--head", head, "--classes", "16")
    assert r.returncode == 0, r.stderr
    assert first_line(r.stdout).startswith("config paramcount ")
    assert f"total          {total}\n" in r.stdout


def test_paramcount_xception_flatten_notes_input_size():
    r = run("paramcount", "--arch", "xception", "--head", "flatten", "--classes", "16")
    assert r.returncode == 0
    assert "24,138,296" in r.stdout
    assert "22,467,128" in r.stdout
    r = run("paramcount", "--arch", "xception", "--head", "flatten", "--classes", "16", "--input-size", "224")
    assert "total          22,467,128\n" in r.stdout


def test_paramcount_freeze_and_descriptor(tmp_path):
    out = tmp_path / "d.json"
    r = run("paramcount", "--arch", "densenet121", "--freeze", "0.75", "--dump-descriptor", str(out))
    assert r.returncode == 0
    assert "frozen layers  320 (75%)" in r.stdout
    assert "non-trainable  4,981,056" in r.stdout
    doc = json.loads(out.read_text())
    assert doc["name"] == "densenet121"


def test_unknown_optimizer_lists_all_names():
    r = run("train", "--data", "synth:4x8x32", "--optimizer", "bogus")
    assert r.returncode == 1
    for name in ["sgd", "rmsprop", "adagrad", "adadelta", "adam", "nadam", "adamax"]:
        assert name in r.stderr


@pytest.mark.parametrize("args", [
    ["train", "--data", "synth:4x8x32", "--bogus-flag", "1"],
    ["train"],
    ["nosuchverb"],
    [],
    ["paramcount", "--arch", "resnet50"],
    ["paramcount", "--arch", "mobilenet", "--head", "maxpool"],
    ["train", "--data", "synth:4x8x32", "--freeze", "1.5"],
])
def test_usage_errors_exit_1(args):
    assert run(*args).returncode == 1


@pytest.mark.parametrize("verb", ["train", "sweep", "eval", "paramcount", "serve", "bench", "synth"])
def test_help_documents_flags(verb):
    r = run(verb, "--help")
    assert r.returncode == 0
    assert "--" in r.stdout


def test_runtime_failure_exits_2(tmp_path):
    assert run("bench", "--ckpt", str(tmp_path / "missing.ckpt")).returncode == 2
    assert run("train", "--data", str(tmp_path / "nodata"), "--epochs", "1").returncode == 2


def test_train_overfits_and_is_deterministic(trained):
    a = (trained / "a.ckpt").read_bytes()
    assert a[:8] == b"FLORCKPT"
    assert a == (trained / "b.ckpt").read_bytes()
    history = json.loads((trained / "a.json").read_text())
    assert len(history) == 200
    assert history[-1]["train_accuracy"] == 1.0


def test_eval_reports_and_dumps(trained, tmp_path):
    dump = tmp_path / "miss.txt"
    metrics = tmp_path / "m.json"
    r = run("eval", "--ckpt", str(trained / "a.ckpt"), "--data", "synth:4x8x32", "--seed", "1",
            "--dump-misclassified", str(dump), "--out", str(metrics))
    assert r.returncode == 0, r.stderr
    assert first_line(r.stdout).startswith("config eval ")
    m = json.loads(metrics.read_text())
    assert m["top1_accuracy"] == 1.0
    assert m["samples"] == 32
    assert "0 misclassified" in r.stdout

    r = run("eval", "--ckpt", str(trained / "a.ckpt"), "--data", "synth:4x8x32", "--seed", "5",
            "--dump-misclassified", str(dump), "--out", str(metrics))
    assert r.returncode == 0
    m = json.loads(metrics.read_text())
    wrong = round((1 - m["top1_accuracy"]) * m["samples"])
    lines = dump.read_text().splitlines()
    assert lines[0] == "sample_id\tactual\tpredicted\tconfidence"
    lines = lines[1:]
    assert len(lines) == wrong


def test_eval_rejects_class_mismatch(trained):
    r = run("eval", "--ckpt", str(trained / "a.ckpt"), "--data", "synth:3x8x32")
    assert r.returncode == 2
    assert "do not match" in r.stderr


def test_bench_writes_report(trained, tmp_path):
    out = tmp_path / "b.json"
    r = run("bench", "--ckpt", str(trained / "a.ckpt"), "--runs", "20", "--warmup", "2", "--out", str(out))
    assert r.returncode == 0, r.stderr
    assert "Avg. Execute Time (ms)" in r.stdout
    doc = json.loads(out.read_text())
    assert doc["runs"] == 20 and len(doc["samples_ms"]) == 20
    assert doc["p50_ms"] <= doc["p95_ms"]
    assert doc["min_ms"] <= doc["avg_ms"] <= doc["max_ms"]


def test_sweep_table6_schema(tmp_path):
    table = tmp_path / "t6.csv"
    r = run("sweep", "--archs", "mini_densenet", "--optimizers", "all", "--freezes", "0",
            "--data", "synth:3x10x32", "--epochs", "1", "--out-table", str(table))
    assert r.returncode == 0, r.stderr
    rows = list(csv.DictReader(table.open()))
    assert [row["optimizer"] for row in rows] == ["sgd", "rmsprop", "adagrad", "adadelta", "adam", "nadam", "adamax"]
    for row in rows:
        assert row["status"] == "ok"
        for key in ["accuracy", "loss", "precision", "recall", "f1"]:
            float(row[key])


def test_sweep_table7_schema_with_pretraining(tmp_path):
    table = tmp_path / "t7.csv"
    r = run("sweep", "--archs", "mini_mobilenet", "--optimizers", "sgd", "--freezes", "0.25,0.5,0.75",
            "--data", "synth:3x10x32", "--pretrain", "synth:4x10x32", "--pretrain-epochs", "1",
            "--epochs", "1", "--out-table", str(table))
    assert r.returncode == 0, r.stderr
    rows = list(csv.DictReader(table.open()))
    assert [row["freeze_ratio"] for row in rows] == ["0.25", "0.50", "0.75"]


def test_synth_then_train_from_directory(tmp_path):
    root = tmp_path / "flowers"
    r = run("synth", "--classes", "3", "--per-class", "10", "--size", "32", "--out-dir", str(root))
    assert r.returncode == 0, r.stderr
    assert sorted(p.name for p in root.iterdir()) == ["synth_00", "synth_01", "synth_02"]
    assert len(list((root / "synth_01").glob("*.png"))) == 10
    ckpt = tmp_path / "m.ckpt"
    r = run("train", "--data", str(root), "--epochs", "1", "--out", str(ckpt))
    assert r.returncode == 0, r.stderr
    assert ckpt.exists()


def test_serve_answers_and_stops(trained):
    p = subprocess.Popen([FLORA, "serve", "--ckpt", str(trained / "a.ckpt"), "--port", "0"],
                         stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        assert p.stdout.readline().startswith("config serve ")
        line = p.stdout.readline()
        assert line.startswith("listening on http://")
        url = line.split()[-1]
        with urllib.request.urlopen(url + "/classes", timeout=30) as res:
            assert res.headers["Content-Type"] == "application/json"
            assert len(json.loads(res.read())["classes"]) == 4
    finally:
        p.send_signal(signal.SIGTERM)
        assert p.wait(timeout=30) == 0
