import csv
import json
import os

import numpy as np
import pytest

from nestcast.cli import RunManifest, run, substream
from nestcast.fieldio import FieldFile, read_field, write_field
from nestcast.meshgraph import build_earth_graph
from nestcast.nesting import RegionWindow, in_channels
from nestcast.network import Forecaster, NetworkConfig
from nestcast.training import NormStats, save_model

TRAIN = ["--epochs", "3", "--latent", "8", "--blocks", "1", "--heads", "2", "--batch", "2"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["build-graph", "--h", "4", "--w", "8", "--levels", "1", "--out", str(d / "graph")]) == 0
    assert run(["gen-data", "--kind", "advect", "--h", "4", "--w", "8", "--steps", "3", "--channels", "2", "--trajectories", "2", "--out", str(d / "data")]) == 0
    assert run(["train", "--graph", str(d / "graph"), "--data", str(d / "data"), "--out", str(d / "ckpt")] + TRAIN) == 0
    return d


def test_substream_is_stable_and_distinct():
    assert substream(0, "init") == substream(0, "init")
    assert substream(0, "init") != substream(0, "batches")
    assert substream(0, "init") != substream(1, "init")


def test_pipeline_outputs(workdir):
    names = sorted(os.listdir(workdir / "data"))
    assert names == ["manifest.json", "traj_0000.field", "traj_0001.field"]
    man = RunManifest.read(workdir / "ckpt" / "manifest.json")
    assert man.subcommand == "train"
    assert set(man.seeds) >= {"init", "batches", "root"}
    assert any(k.endswith("traj_0000.field") for k in man.inputs)
    assert "params.json" in man.outputs
    with open(workdir / "ckpt" / "loss.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "lr", "loss"] and len(rows) == 4


def test_forecast_and_replay(workdir, capsys):
    out = workdir / "fc"
    init = workdir / "data" / "traj_0000.field"
    assert run(["forecast", "--params", str(workdir / "ckpt"), "--init", str(init), "--steps", "2", "--out", str(out)]) == 0
    fc = read_field(str(out / "forecast.field"))
    assert fc.data.shape == (2, 2, 4, 8)
    assert np.all(np.isfinite(fc.data))
    capsys.readouterr()
    assert run(["replay", "--manifest", str(out / "manifest.json")]) == 0
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["identical"] is True


def test_training_is_replayable(workdir, capsys):
    assert run(["replay", "--manifest", str(workdir / "ckpt" / "manifest.json")]) == 0
    assert '"identical": true' in capsys.readouterr().out


def test_replay_detects_changed_output(workdir, tmp_path, capsys):
    man = RunManifest.read(workdir / "data" / "manifest.json")
    key = sorted(man.outputs)[0]
    man.outputs[key] = "0" * 40
    path = man.write(str(tmp_path / "manifest.json"))
    assert run(["replay", "--manifest", path]) == 1
    assert '"identical": false' in capsys.readouterr().out


def test_evaluate_and_spectrum(workdir):
    truth = workdir / "data" / "traj_0000.field"
    report = workdir / "report.json"
    assert run(["evaluate", "--pred", str(truth), "--truth", str(truth), "--out", str(report)]) == 0
    r = json.loads(report.read_text())
    np.testing.assert_allclose(r["rmse"], 0.0)
    np.testing.assert_allclose(r["acc"], 1.0)
    assert os.path.exists(str(report) + ".manifest.json")
    spec = workdir / "spec.csv"
    assert run(["spectrum", "--field", str(truth), "--out", str(spec)]) == 0
    rows = list(csv.reader(open(spec)))
    assert rows[0] == ["k", "ch0", "ch1"] and len(rows) == 1 + 5


def test_ensemble(workdir):
    out = workdir / "ens"
    init = workdir / "data" / "traj_0000.field"
    args = ["ensemble", "--params", str(workdir / "ckpt"), "--init", str(init), "--members", "3", "--steps", "2", "--out", str(out)]
    assert run(args) == 0
    members = [read_field(str(out / f"member_{m:03d}.field")).data for m in range(3)]
    mean = read_field(str(out / "mean.field")).data
    np.testing.assert_allclose(mean, np.mean(members, axis=0), atol=1e-5)
    assert not np.allclose(members[0], members[1])


def test_track(tmp_path):
    data = tmp_path / "vortex"
    assert run(["gen-data", "--kind", "vortex", "--h", "60", "--w", "120", "--steps", "5", "--out", str(data)]) == 0
    centers = json.loads((data / "centers.json").read_text())["centers"]
    out = tmp_path / "track.json"
    init = f"{centers[0][0]},{centers[0][1]}"
    assert run(["track", "--fields", str(data / "traj_0000.field"), "--init", init, "--out", str(out), "--csv", str(tmp_path / "t.csv")]) == 0
    track = json.loads(out.read_text())
    assert len(track["fixes"]) == 5 and track["termination"] == "end-of-data"


def test_nest_with_global_truth(tmp_path):
    win = RegionWindow(1, 3, 2, 4, boundary=1, refine=2)
    graph = build_earth_graph(4, 4, 2, domain=win.domain(4, 8))
    cfg = NetworkConfig(latent_dim=8, n_msm_blocks=1, n_heads=2, n_channels=2, in_channels=in_channels("nng", 2))
    save_model(Forecaster(cfg, graph, seed=0, dtype=np.float32), str(tmp_path / "reg"), NormStats(np.zeros(2), np.ones(2)))
    rng = np.random.default_rng(0)
    write_field(str(tmp_path / "g.field"), FieldFile(rng.normal(size=(4, 2, 4, 8))))
    write_field(str(tmp_path / "r.field"), FieldFile(rng.normal(size=(2, 4, 4))))
    args = ["nest", "--regional-ckpt", str(tmp_path / "reg"), "--global-truth", str(tmp_path / "g.field"), "--region-init", str(tmp_path / "r.field"),
            "--window", "1,3,2,4", "--boundary", "1", "--refine", "2", "--mode", "nng", "--steps", "3", "--out", str(tmp_path / "out")]
    assert run(args) == 0
    assert read_field(str(tmp_path / "out" / "regional.field")).data.shape == (3, 2, 4, 4)
    bad = list(args)
    bad[bad.index("--steps") + 1] = "5"
    assert run(bad) == 3
    no_global = [a for a in args if a not in ("--global-truth", str(tmp_path / "g.field"))]
    assert run(no_global) == 2


def test_exit_codes(tmp_path, capsys):
    assert run(["build-graph", "--h", "4"]) == 2
    assert run(["no-such-command"]) == 2
    assert run(["evaluate", "--pred", str(tmp_path / "missing.field"), "--truth", "x", "--out", str(tmp_path / "r.json")]) == 1
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["error"] == "runtime"
    bad = tmp_path / "bad.field"
    bad.write_bytes(b"\x01")
    assert run(["spectrum", "--field", str(bad), "--out", str(tmp_path / "s.csv")]) == 3
    assert json.loads(capsys.readouterr().err.strip())["error"] == "truncated-payload"
    assert run(["track", "--fields", str(bad), "--init", "north", "--out", str(tmp_path / "t.json")]) == 3
    write_field(str(tmp_path / "ok.field"), np.ones((2, 7, 4, 8)))
    assert run(["track", "--fields", str(tmp_path / "ok.field"), "--init", "north", "--out", str(tmp_path / "t.json")]) == 2
