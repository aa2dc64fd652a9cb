import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from orbitllp import budget, chippack, models
from orbitllp.cli import run

SMALL = ["--chips-x", "10", "--chips-y", "8", "--communes", "6", "--band-width", "3"]


def run_json(capsys, argv):
    code = run(argv)
    out = capsys.readouterr()
    return code, (json.loads(out.out) if code == 0 else None), out.err


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("ds")
    assert run(["synth", "--seed", "2", "--out-dir", str(path)] + SMALL) == 0
    return path


@pytest.fixture(scope="module")
def trained(small_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    code = run(["train", "--dataset", str(small_dataset), "--filters", "8", "--epochs", "3", "--quiet", "--out-dir", str(out)])
    assert code == 0
    return out


def test_synth_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(["synth", "--seed", "1234", "--out-dir", str(tmp_path / name)] + SMALL) == 0
    for f in ("chips.llpk", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    err = capsys.readouterr().err
    assert '"seed": 1234' in err and '"command": "synth"' in err


def test_footprint_output(capsys):
    code, out, _ = run_json(capsys, ["footprint", "--classes", "5", "--communes", "1082"])
    assert code == 0
    assert out["proportions_bytes"] == 10_820 and out["proportions_display"] == "10.6 Kb"


def test_volumetry_output(capsys):
    code, out, _ = run_json(capsys, ["volumetry", "--chips-per-sec", "2154.6"])
    assert out["volumetry"]["km2_per_orbit"] == 11_600_000
    assert out["throughput"]["ratio"] == pytest.approx(3.727, abs=1e-3)


def test_usage_errors_exit_2(capsys):
    assert run(["frobnicate"]) == 2
    assert run(["footprint", "--bogus"]) == 2
    assert run([]) == 2
    assert run(["train", "--help"]) == 0
    capsys.readouterr()


def test_module_errors_exit_1(tmp_path, capsys):
    assert run(["stats", "--dataset", str(tmp_path / "missing")]) == 1
    (tmp_path / "chips.llpk").write_bytes(b"NOPE" + bytes(20))
    assert run(["stats", "--dataset", str(tmp_path)]) == 1
    assert run(["model-info", "--kind", "downconv"]) == 1
    assert "error" in capsys.readouterr().err


def test_stats_and_split(small_dataset, tmp_path, capsys):
    code, out, _ = run_json(capsys, ["stats", "--dataset", str(small_dataset)])
    assert out["chips"] == 80 and out["communes"] == 6 and out["splits"]["unassigned"] == 0
    code, out, _ = run_json(capsys, ["split", "--dataset", str(small_dataset), "--band-width", "2", "--out-dir", str(tmp_path)])
    assert code == 0 and sum(out["splits"].values()) == 80
    ds = chippack.read_dataset(tmp_path)
    assert ds.communes is not None and len(ds.communes) == 6


def test_train_outputs(trained):
    params = models.load_model(trained / "model.llpm")
    assert params.kind == "downconv" and params.hyper == 8 and params.n_classes == 3
    rows = list(csv.DictReader((trained / "train_log.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [0, 1, 2]


def test_train_is_reproducible(small_dataset, trained, tmp_path, capsys):
    run(["train", "--dataset", str(small_dataset), "--filters", "8", "--epochs", "3", "--quiet", "--out-dir", str(tmp_path)])
    assert (tmp_path / "model.llpm").read_bytes() == (trained / "model.llpm").read_bytes()
    losses = lambda p: [r["train_loss"] for r in csv.DictReader((p / "train_log.csv").open())]  # noqa: E731
    assert losses(tmp_path) == losses(trained)
    capsys.readouterr()


def test_eval_and_predict(small_dataset, trained, tmp_path, capsys):
    model = str(trained / "model.llpm")
    code, summary, _ = run_json(capsys, ["eval", "--dataset", str(small_dataset), "--model-path", model, "--out-dir", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "eval.csv").open()))
    assert len(rows) == summary["chips"]
    assert summary["mean_mae"] == pytest.approx(np.mean([float(r["mae"]) for r in rows]))
    assert "baseline_mae" in json.loads((tmp_path / "eval_summary.json").read_text())
    code, out, _ = run_json(capsys, ["predict", "--dataset", str(small_dataset), "--model-path", model, "--out-dir", str(tmp_path)])
    assert out["chips"] == 80
    ppm = (tmp_path / "proportions_class0.ppm").read_bytes()
    assert ppm.startswith(b"P6\n40 32\n255\n") and len(ppm) == len(b"P6\n40 32\n255\n") + 40 * 32 * 3


def test_eval_rejects_class_mismatch(small_dataset, tmp_path, capsys):
    models.save_model(models.DownconvParams.initialize(4, 5), tmp_path / "m.llpm")
    assert run(["eval", "--dataset", str(small_dataset), "--model-path", str(tmp_path / "m.llpm"), "--out-dir", str(tmp_path)]) == 1
    capsys.readouterr()


def test_model_info(trained, capsys):
    code, out, _ = run_json(capsys, ["model-info", "--model-path", str(trained / "model.llpm")])
    assert out["parameters"] == models.param_count("downconv", 8, 3)
    code, out, _ = run_json(capsys, ["model-info", "--kind", "qkm", "--hyper", "64", "--classes", "5"])
    assert out["parameters"] == 3457


def test_uplink_roundtrip(small_dataset, tmp_path, capsys):
    code, out, _ = run_json(capsys, ["uplink", "encode", "--dataset", str(small_dataset), "--out-dir", str(tmp_path)])
    assert code == 0 and out["payload_bytes"] == 2 * 3 * 6
    packet = tmp_path / "uplink.llpu"
    code, decoded, _ = run_json(capsys, ["uplink", "decode", "--input", str(packet)])
    manifest = json.loads((small_dataset / "manifest.json").read_text())
    for cid, entry in manifest["communes"].items():
        np.testing.assert_allclose(decoded[cid], entry["proportions"], atol=2**-10)
    (tmp_path / "bad.llpu").write_bytes(packet.read_bytes()[:-1])
    assert run(["uplink", "decode", "--input", str(tmp_path / "bad.llpu")]) == 1
    capsys.readouterr()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "orbitllp", "footprint", "--chips", "72213"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["segmentation_display"] == "705 Mb"
    assert budget.format_mb(722_130_000) == "705 Mb"
