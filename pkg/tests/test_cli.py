import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from geobuckle.cli import (EXIT_FAIL, EXIT_INTEGRITY, EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE,
                           ExtrapolationWarning, main)
from geobuckle.model import HybridModel
from geobuckle.pipeline import load_checkpoint, read_dataset


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def check_manifest(out: Path):
    manifests = list(out.rglob("run_manifest.json"))
    assert len(manifests) == 1
    m = json.loads(manifests[0].read_text())
    assert m["artifacts"]
    for rel, digest in m["artifacts"].items():
        assert hashlib.sha256((out / rel).read_bytes()).hexdigest() == digest
    return m


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    assert run("gen-data", "--family", "two_param", "--k-per-axis", 3, "--resolution", "8x8",
               "--time-steps", 11, "--out", out) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert run("train", "--dataset", dataset, "--out", out, "--epochs", 2, "--split-ratio", 0.7) == EXIT_OK
    return out


# --- gen-data -----------------------------------------------------------------------


def test_gen_data_factorial_count(tmp_path):
    assert run("gen-data", "--family", "two_param", "--k-per-axis", 16, "--resolution", "4x8",
               "--time-steps", 3, "--out", tmp_path / "ds") == EXIT_OK
    assert len(read_dataset(tmp_path / "ds")) == 256
    m = check_manifest(tmp_path / "ds")
    assert m["command"] == "gen-data"
    provenance = json.loads((tmp_path / "ds" / "manifest.json").read_text())["provenance"]
    assert provenance["generator_seed"] == 0 and provenance["parameter_ranges"]["r_top"] == [20.0, 35.0]


def test_gen_data_reproducible(tmp_path):
    args = ["gen-data", "--family", "four_param", "--samples", 12, "--seed", 5, "--resolution", "8x8",
            "--time-steps", 5]
    assert run(*args, "--out", tmp_path / "a") == EXIT_OK
    assert run(*args, "--out", tmp_path / "b") == EXIT_OK
    ma = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "run_manifest.json").read_text())
    assert ma["artifacts"] == mb["artifacts"]


def test_gen_data_usage_errors(tmp_path, dataset):
    assert run("gen-data", "--family", "two_param", "--samples", 0, "--out", tmp_path / "x") == EXIT_USAGE
    assert run("gen-data", "--family", "two_param", "--k-per-axis", 2, "--out", dataset) == EXIT_USAGE
    assert run("gen-data", "--family", "five_param", "--samples", 3, "--out", tmp_path / "y") == EXIT_USAGE
    assert run("gen-data", "--family", "two_param", "--k-per-axis", 2, "--resolution", "8by8",
               "--out", tmp_path / "z") == EXIT_USAGE


# --- train -------------------------------------------------------------------------


def test_train_artifacts(trained):
    m = check_manifest(trained)
    assert m["command"] == "train" and m["seeds"] == {"split": 0, "init": 0, "shuffle": 0}
    assert m["config"]["model"]["width"] == 64  # desk preset
    rows = read_csv(trained / "training_curve.csv")
    assert rows[0] == ["epoch", "loss", "loss_ux", "loss_uy", "loss_uz", "loss_fr", "lr"]
    assert len(rows) == 3
    stats = json.loads((trained / "norm_stats.json").read_text())
    assert len(stats["x_mean"]) == 6 and len(stats["u_std"]) == 3


def test_train_zero_epochs_is_initialization(dataset, tmp_path):
    assert run("train", "--dataset", dataset, "--out", tmp_path / "r", "--epochs", 0, "--seed-init", 3) == EXIT_OK
    model, _, _ = load_checkpoint(tmp_path / "r" / "checkpoint.bin")
    init = HybridModel.initialize(model.config, 3, np.float32)
    assert all(model.params[k].tobytes() == v.tobytes() for k, v in init.params.items())


def test_train_reproducible_checksums(dataset, tmp_path):
    for name in ("a", "b"):
        assert run("train", "--dataset", dataset, "--out", tmp_path / name, "--epochs", 1) == EXIT_OK
    ma = json.loads((tmp_path / "a" / "run_manifest.json").read_text())["artifacts"]
    mb = json.loads((tmp_path / "b" / "run_manifest.json").read_text())["artifacts"]
    assert ma == mb


def test_train_missing_dataset(tmp_path, capsys):
    assert run("train", "--dataset", tmp_path / "nope", "--out", tmp_path / "r") == EXIT_IO
    assert "nope" in capsys.readouterr().err


def test_train_integrity_failure(dataset, tmp_path):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(dataset, bad)
    (bad / "s0002" / "disp.f32").write_bytes(b"\x00" * 10)
    assert run("train", "--dataset", bad, "--out", tmp_path / "r") == EXIT_INTEGRITY


def test_train_numeric_failure(dataset, tmp_path):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(dataset, bad)
    for f in bad.glob("s*/force.csv"):
        lines = f.read_text().splitlines()
        lines[3] = lines[3].split(",")[0] + ",nan"
        f.write_text("\n".join(lines) + "\n")
    assert run("train", "--dataset", bad, "--out", tmp_path / "r", "--epochs", 1) == EXIT_NUMERIC


# --- eval ---------------------------------------------------------------------------


def test_eval_outputs(trained, dataset, tmp_path):
    out = tmp_path / "ev"
    assert run("eval", "--checkpoint", trained / "checkpoint.bin", "--dataset", dataset, "--out", out) == EXIT_OK
    check_manifest(out)
    rows = read_csv(out / "metrics.csv")
    assert rows[0] == ["id", "err_ux", "err_uy", "err_uz", "err_fr", "r2_ux", "r2_uy", "r2_uz"]
    test_ids = json.loads((trained / "split.json").read_text())["test"]
    assert [r[0] for r in rows[1:1 + len(test_ids)]] == test_ids
    assert [r[0] for r in rows[-4:]] == ["mean", "min", "max", "median"]
    for sid in test_ids:
        assert read_csv(out / "force_curves" / f"{sid}.csv")[0] == ["t", "F_ref", "F_pred"]
    assert read_csv(out / "node_errors" / f"{test_ids[0]}.csv")[0][:3] == ["x", "y", "z"]
    assert read_csv(out / "scatter.csv")[0] == ["id", "node", "component", "ref", "pred"]


def test_eval_oracle_zero_errors(dataset, tmp_path):
    assert run("eval", "--oracle", "--dataset", dataset, "--out", tmp_path / "ev", "--subset", "all") == EXIT_OK
    rows = read_csv(tmp_path / "ev" / "metrics.csv")
    for r in rows[1:10]:
        assert [float(v) for v in r[1:5]] == [0.0] * 4
        assert [float(v) for v in r[5:]] == [1.0] * 3


def test_eval_corrupt_checkpoint(trained, dataset, tmp_path):
    raw = (trained / "checkpoint.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-100])
    assert run("eval", "--checkpoint", tmp_path / "bad.bin", "--dataset", dataset,
               "--out", tmp_path / "ev") == EXIT_INTEGRITY
    assert run("eval", "--checkpoint", tmp_path / "missing.bin", "--dataset", dataset,
               "--out", tmp_path / "ev2") == EXIT_IO
    assert run("eval", "--dataset", dataset, "--out", tmp_path / "ev3") == EXIT_USAGE


# --- predict --------------------------------------------------------------------------


def test_predict_time_grids_agree(trained, tmp_path):
    ckpt = trained / "checkpoint.bin"
    assert run("predict", "--checkpoint", ckpt, "--params", "r_top=27.5,d_rib=17.5", "--resolution", "8x8",
               "--times", "0,0.25,0.5,0.75,1", "--out", tmp_path / "a") == EXIT_OK
    assert run("predict", "--checkpoint", ckpt, "--params", "r_top=27.5,d_rib=17.5", "--resolution", "8x8",
               "--times", "0.5,1", "--out", tmp_path / "b") == EXIT_OK
    check_manifest(tmp_path / "a")
    fa = {r[0]: r[1] for r in read_csv(tmp_path / "a" / "force.csv")[1:]}
    fb = {r[0]: r[1] for r in read_csv(tmp_path / "b" / "force.csv")[1:]}
    assert fb == {k: fa[k] for k in fb}
    assert read_csv(tmp_path / "a" / "displacement.csv") == read_csv(tmp_path / "b" / "displacement.csv")


def test_predict_matches_eval_for_training_location(trained, dataset, tmp_path):
    assert run("eval", "--checkpoint", trained / "checkpoint.bin", "--dataset", dataset, "--subset", "all",
               "--out", tmp_path / "ev") == EXIT_OK
    sample = read_dataset(dataset)[4]
    p = sample.params
    assert run("predict", "--checkpoint", trained / "checkpoint.bin", "--params",
               f"r_top={p.r_top!r},d_rib={p.d_rib!r}", "--resolution", "8x8",
               "--times", ",".join(repr(float(t)) for t in sample.times), "--out", tmp_path / "pr") == EXIT_OK
    ev = [r[2] for r in read_csv(tmp_path / "ev" / "force_curves" / f"{sample.id}.csv")[1:]]
    pr = [r[1] for r in read_csv(tmp_path / "pr" / "force.csv")[1:]]
    assert ev == pr
    scatter = [r for r in read_csv(tmp_path / "ev" / "scatter.csv")[1:] if r[0] == sample.id]
    pred = {(int(r[1]), r[2]): r[4] for r in scatter}
    disp = read_csv(tmp_path / "pr" / "displacement.csv")[1:]
    for j, row in enumerate(disp):
        assert [pred[(j, c)] for c in ("ux", "uy", "uz")] == row[3:]
    assert run("predict", "--checkpoint", trained / "checkpoint.bin", "--cloud", dataset / sample.id,
               "--times", ",".join(repr(float(t)) for t in sample.times), "--out", tmp_path / "pc") == EXIT_OK
    assert read_csv(tmp_path / "pc" / "force.csv") == read_csv(tmp_path / "pr" / "force.csv")


def test_predict_extrapolation_warns(trained, tmp_path):
    with pytest.warns(ExtrapolationWarning):
        code = run("predict", "--checkpoint", trained / "checkpoint.bin", "--params", "r_top=40,d_rib=15",
                   "--resolution", "8x8", "--out", tmp_path / "p")
    assert code == EXIT_OK and (tmp_path / "p" / "force.csv").is_file()


def test_predict_usage(trained, tmp_path):
    ckpt = trained / "checkpoint.bin"
    assert run("predict", "--checkpoint", ckpt, "--out", tmp_path / "a") == EXIT_USAGE
    assert run("predict", "--checkpoint", ckpt, "--params", "r_top=30", "--out", tmp_path / "b") == EXIT_USAGE
    assert run("predict", "--checkpoint", ckpt, "--params", "r_top=30,d_rib=15", "--times", "0,2",
               "--out", tmp_path / "c") == EXIT_USAGE


# --- gradcheck -------------------------------------------------------------------------


def test_gradcheck_passes_and_lists_each_group_once(capsys, tmp_path):
    assert run("gradcheck", "--out", tmp_path / "gc") == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    names = [l.split()[0] for l in lines[:-1]]
    assert sorted(names) == sorted(HybridModel.initialize(
        __import__("geobuckle.config", fromlist=["TOY_MODEL"]).TOY_MODEL).params)
    assert len(names) == len(set(names))
    assert lines[-1].endswith("PASS")
    check_manifest(tmp_path / "gc")


def test_gradcheck_detects_corruption(capsys):
    assert run("gradcheck", "--corrupt", "blocks.0.slice.weight") == EXIT_FAIL
    assert capsys.readouterr().out.strip().endswith("FAIL")
    assert run("gradcheck", "--corrupt", "nonsense") == EXIT_USAGE
    assert run("gradcheck", "--precision", "f32") == EXIT_USAGE
