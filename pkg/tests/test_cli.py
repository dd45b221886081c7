import json

import numpy as np
import pytest

from holoforge.cli import RUN_MANIFEST, main
from holoforge.io import read_csv

SMALL = {"optics": {"resolution": [16, 16], "plane_count": 2},
         "solver": {"iterations": 20, "restarts": 1}}


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def artifacts(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())
            if p.suffix in (".csv", ".png", ".pfm")}


def assert_manifest_complete(directory):
    manifest = json.loads((directory / RUN_MANIFEST).read_text())
    present = sorted(str(p.relative_to(directory)) for p in directory.rglob("*") if p.is_file())
    assert sorted(manifest["files"]) == present
    return manifest


def test_optimize_outputs(tmp_path, cfg):
    out = tmp_path / "run"
    assert main(["optimize", "--config", cfg, "--out", str(out), "--seed", "3"]) == 0
    names = set(artifacts(out))
    assert {"phase_t0.png", "phase_t1.png", "phase_t2.png", "powers.csv", "trace.csv"} <= names
    trace = read_csv(out / "trace.csv")
    assert trace[0][:2] == ["iteration", "total"]
    # header, the starting point, then one row per iteration
    assert len(trace) == 22 and all(len(r) == len(trace[0]) for r in trace)
    powers = read_csv(out / "powers.csv")
    assert len(powers) == 4
    m = assert_manifest_complete(out)
    assert m["command"] == "optimize" and m["seeds"]["scene"] == 3


def test_optimize_is_byte_identical(tmp_path, cfg):
    for name in ("a", "b"):
        assert main(["optimize", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    assert artifacts(tmp_path / "a") == artifacts(tmp_path / "b")


def test_datagen_is_byte_identical(tmp_path, cfg):
    for name in ("a", "b"):
        assert main(["datagen", "--config", cfg, "--out", str(tmp_path / name), "--seed", "7"]) == 0
    a = sorted((tmp_path / "a").rglob("*.p*"))
    b = sorted((tmp_path / "b").rglob("*.p*"))
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    assert_manifest_complete(tmp_path / "a")


def test_flag_overrides(tmp_path, cfg):
    out = tmp_path / "o"
    assert main(["optimize", "--config", cfg, "--out", str(out), "--z", "2mm", "--scale", "1.4",
                 "--planes", "1", "--iterations", "5", "--quantize"]) == 0
    m = json.loads((out / RUN_MANIFEST).read_text())
    assert m["optics"]["location_offset"] == "2mm"
    assert m["optics"]["brightness_scale"] == 1.4 and m["optics"]["plane_count"] == 1
    assert len(read_csv(out / "trace.csv")) == 7


def test_simulate_reports_quantization_loss(tmp_path, cfg):
    holo = tmp_path / "h"
    assert main(["optimize", "--config", cfg, "--out", str(holo), "--iterations", "300"]) == 0
    sim = tmp_path / "s"
    assert main(["simulate", "--config", cfg, "--out", str(sim), "--hologram", str(holo)]) == 0
    rows = {r[0]: r[1:] for r in read_csv(sim / "simulate.csv")[1:]}
    assert float(rows["quantized"][0]) <= float(rows["unquantized"][0])
    assert float(rows["difference"][0]) == pytest.approx(
        float(rows["unquantized"][0]) - float(rows["quantized"][0]))
    assert_manifest_complete(sim)


def test_metrics(tmp_path, cfg):
    holo = tmp_path / "h"
    assert main(["optimize", "--config", cfg, "--out", str(holo)]) == 0
    assert main(["metrics", "--config", cfg, "--out", str(tmp_path / "m"),
                 "--hologram", str(holo)]) == 0
    header, row = read_csv(tmp_path / "m" / "metrics.csv")
    assert header[:3] == ["config_hash", "psnr_mean", "psnr_std"]
    assert np.isfinite(float(row[1]))


def test_sweep_six_rows(tmp_path):
    cfg = dict(SMALL, solver={"iterations": 2, "restarts": 1},
               sweep={"wavelengths": [["639nm", "515nm", "473nm"]],
                      "brightness_scale": [1.0, 1.4, 1.8], "volume_depth": ["4mm"],
                      "location_offset": ["2mm", "10mm"], "pixel_pitch": ["3.74um"]})
    path = tmp_path / "eq.json"
    path.write_text(json.dumps(cfg))
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "w")]) == 0
    rows = read_csv(tmp_path / "w" / "sweep.csv")
    assert len(rows) == 7
    col = rows[0].index("brightness_scale"), rows[0].index("location_offset")
    assert {(r[col[0]], r[col[1]]) for r in rows[1:]} == \
        {(s, z) for s in ("1.0", "1.4", "1.8") for z in ("0.002", "0.01")}


def test_learned_pipeline(tmp_path):
    cfg = {"optics": {"resolution": [16, 16]},
           "training": {"scenes": 4, "batch_size": 2, "epochs": 1}}
    path = tmp_path / "t.json"
    path.write_text(json.dumps(cfg))
    t = tmp_path / "teacher"
    assert main(["train-teacher", "--config", str(path), "--out", str(t)]) == 0
    assert (t / "teacher.ckpt").exists() and (t / "history.csv").exists()
    s = tmp_path / "student"
    assert main(["distill", "--config", str(path), "--out", str(s),
                 "--checkpoint", str(t / "teacher.ckpt")]) == 0
    i = tmp_path / "infer"
    assert main(["infer", "--config", str(path), "--out", str(i),
                 "--checkpoint", str(s / "student.ckpt")]) == 0
    assert {"phase_t0.png", "powers.csv", "depth.pfm", "plane_metrics.csv"} <= \
        {p.name for p in i.iterdir()}
    assert_manifest_complete(i)
    assert main(["infer", "--config", str(path), "--out", str(i), "--z", "5mm", "--strict-z",
                 "--checkpoint", str(s / "student.ckpt")]) == 2


def test_error_exit_codes(tmp_path, capsys):
    assert main(["optimize", "--out", str(tmp_path), "--config", str(tmp_path / "none.json")]) == 3
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: IOError:") and "\n" not in err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["optimize", "--out", str(tmp_path), "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"optics": {"pixel_pitch": 3.74}}))
    assert main(["optimize", "--out", str(tmp_path), "--config", str(bad)]) == 2
    assert main(["optimize", "--out", str(tmp_path), "--z", "nope"]) == 2
    assert main(["infer", "--out", str(tmp_path)]) == 2
    assert main(["bogus"]) == 2


def test_divergence_exit_code(tmp_path, monkeypatch):
    from holoforge import cli
    from holoforge.errors import DivergenceError

    def boom(*a, **k):
        raise DivergenceError("loss became nan at iteration 3")

    monkeypatch.setattr(cli, "optimize_hologram", boom)
    assert main(["optimize", "--out", str(tmp_path)]) == 4
