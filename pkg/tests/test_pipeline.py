import json
import math
import warnings

import numpy as np
import pytest

from geobuckle.config import DESK_MODEL, TOY_MODEL
from geobuckle.errors import CheckpointError, DimensionError, InputError, IntegrityError, ShapeMismatchError
from geobuckle.geometry import BottleParams
from geobuckle.model import HybridModel, l1_loss, total_loss
from geobuckle.pipeline import (MetricsReport, NormStats, load_checkpoint, normalize_fit, read_dataset,
                                save_checkpoint, split_dataset, write_dataset)
from geobuckle.pipeline.data import make_sample, read_manifest
from geobuckle.pipeline.metrics import REPORT_HEADER, UndefinedMetricWarning, r_squared, rel_l2

SMALL = [BottleParams(r_top=20.0 + 5 * i, d_rib=12.0 + 4 * i) for i in range(3)]


@pytest.fixture(scope="module")
def samples():
    return [make_sample(f"s{i:04d}", p, 8, 8, 11) for i, p in enumerate(SMALL)]


# --- losses ----------------------------------------------------------------------


def test_l1_loss_cases():
    assert l1_loss(np.array([0.3, -2.0]), np.array([0.3, -2.0])) == 0.0
    assert l1_loss(np.array([1.0, 1.0]), np.array([0.0, 3.0])) == 1.5
    a, b = np.random.default_rng(0).normal(size=(2, 9))
    assert l1_loss(-a, -b) == l1_loss(a, b)
    with pytest.raises(DimensionError):
        l1_loss(np.zeros(2), np.zeros(3))


def test_total_loss_cases():
    rng = np.random.default_rng(1)
    u, f = rng.normal(size=(10, 3)), rng.normal(size=7)
    assert total_loss(u, u, f, f)[0] == 0.0
    off = u.copy()
    off[:, 0] += 1.0
    assert total_loss(off, u, f, f)[0] == 1.0
    uh, fh = rng.normal(size=(10, 3)), rng.normal(size=7)
    tot, terms = total_loss(uh, u, fh, f)
    independent = [l1_loss(uh[:, c], u[:, c]) for c in range(3)] + [l1_loss(fh, f)]
    assert [terms[k] for k in ("ux", "uy", "uz", "fr")] == independent
    assert tot == independent[0] + independent[1] + independent[2] + independent[3]


# --- metrics ----------------------------------------------------------------------


def test_rel_l2_cases():
    t = np.array([3.0, 4.0])
    assert rel_l2(t, t) == 0.0
    assert rel_l2(np.zeros(2), t) == 1.0
    assert abs(rel_l2(np.array([3.0, 0.0]), t) - 0.8) < 1e-12


def test_rel_l2_zero_target_flagged():
    with pytest.warns(UndefinedMetricWarning):
        assert math.isnan(rel_l2(np.ones(3), np.zeros(3)))


def test_rel_l2_scale_covariant():
    p, t = np.random.default_rng(2).normal(size=(2, 50))
    for a in (3.0, -0.25, 1e6):
        assert abs(rel_l2(a * p, a * t) - rel_l2(p, t)) < 1e-14


def test_r_squared_cases():
    t = np.array([1.0, 4.0, 2.0, 7.0])
    assert r_squared(t, t) == 1.0
    assert abs(r_squared(np.full(4, t.mean()), t)) < 1e-12
    assert abs(r_squared(np.array([0.0, 1.0]), np.array([0.0, 2.0])) - 0.5) < 1e-12
    with pytest.raises(InputError):
        r_squared(np.ones(3), np.full(3, 2.0))


def test_report_shape_and_nan_exclusion():
    errs = {"err_ux": np.array([0.1, 0.3, np.nan]), "err_uy": np.array([0.2, 0.2, 0.5]),
            "err_uz": np.array([0.0, 1.0, 0.5]), "err_fr": np.array([0.4, 0.1, 0.1])}
    r2 = {c: np.ones(3) for c in ("r2_ux", "r2_uy", "r2_uz")}
    rep = MetricsReport(["a", "b", "c"], errs, r2)
    s = rep.summary()
    assert s["mean"]["err_ux"] == pytest.approx(0.2) and s["max"]["err_ux"] == 0.3
    for c in errs:
        assert s["min"][c] <= s["median"][c] <= s["max"][c]
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER) == "id,err_ux,err_uy,err_uz,err_fr,r2_ux,r2_uy,r2_uz"
    assert lines[4] == "" and lines[5] == "stat,err_ux,err_uy,err_uz,err_fr"
    assert [l.split(",")[0] for l in lines[6:]] == ["mean", "min", "max", "median"]


# --- normalization -----------------------------------------------------------------


def _stats_1d(values):
    v = np.asarray(values, dtype=np.float64)
    return NormStats(np.zeros(6), np.ones(6), np.zeros(3), np.ones(3), float(v.mean()), float(v.std()))


def test_normalize_population_std():
    st = _stats_1d([0.0, 2.0])
    assert st.f_mean == 1.0 and st.f_std == 1.0
    np.testing.assert_allclose(st.norm_f(np.array([0.0, 2.0])), [-1.0, 1.0], atol=1e-8)


def test_normalize_constant_dimension(samples):
    st = normalize_fit(samples)
    const = _stats_1d([5.0, 5.0, 5.0])
    assert const.f_std == 0.0
    np.testing.assert_array_equal(const.norm_f(np.array([5.0, 5.0])), [0.0, 0.0])
    assert np.all(np.isfinite(st.norm_x(samples[0].features().astype(np.float64))))


def test_normalize_roundtrip(samples):
    st = normalize_fit(samples)
    u = samples[1].disp.astype(np.float64)
    f = samples[1].forces.astype(np.float64)
    back_u = st.denorm_u(st.norm_u(u))
    back_f = st.denorm_f(st.norm_f(f))
    assert np.abs(back_u - u).max() <= 1e-12 * np.abs(u).max()
    assert np.abs(back_f - f).max() <= 1e-12 * np.abs(f).max()
    assert NormStats.from_json(json.loads(json.dumps(st.to_json()))).equals(st)


def test_normalize_reads_train_only(samples):
    train, test = samples[:2], samples[2:]
    st = normalize_fit(train)
    g = np.concatenate([s.features() for s in train]).astype(np.float64)
    np.testing.assert_array_equal(st.x_mean, g.mean(0))
    assert not np.array_equal(st.x_mean, normalize_fit(samples).x_mean)
    with pytest.raises(InputError):
        normalize_fit([])


# --- split -------------------------------------------------------------------------


def test_split_counts():
    tr, te = split_dataset(list(range(254)), 0.9, 0)
    assert (len(tr), len(te)) == (228, 26)
    tr, te = split_dataset(list(range(10)), 0.9, 0)
    assert (len(tr), len(te)) == (9, 1)


def test_split_deterministic_disjoint_exhaustive():
    a = split_dataset(list(range(50)), 0.8, 3)
    assert a == split_dataset(list(range(50)), 0.8, 3)
    assert sorted(a[0] + a[1]) == list(range(50)) and not set(a[0]) & set(a[1])
    with pytest.raises(InputError):
        split_dataset([1], 0.5, 0)
    with pytest.raises(InputError):
        split_dataset([1, 2], 1.0, 0)


# --- dataset I/O ---------------------------------------------------------------------


def test_dataset_roundtrip(samples, tmp_path):
    write_dataset(samples, tmp_path / "ds", "two_param", {"generator_seed": 0})
    back = read_dataset(tmp_path / "ds")
    assert len(back) == len(samples) and all(a.equals(b) for a, b in zip(samples, back))
    write_dataset(back, tmp_path / "ds2", "two_param", {"generator_seed": 0})
    for f in sorted((tmp_path / "ds").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "ds2" / f.relative_to(tmp_path / "ds")).read_bytes()


def test_dataset_manifest_mismatch(samples, tmp_path):
    root = write_dataset(samples, tmp_path / "ds", "two_param")
    m = json.loads((root / "manifest.json").read_text())
    m["N"] += 1
    (root / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(IntegrityError):
        read_dataset(root)


def test_dataset_missing_file_and_bad_version(samples, tmp_path):
    root = write_dataset(samples, tmp_path / "ds", "two_param")
    (root / "s0001" / "force.csv").unlink()
    with pytest.raises(IntegrityError):
        read_dataset(root)
    m = json.loads((root / "manifest.json").read_text())
    m["version"] = 99
    (root / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(IntegrityError):
        read_manifest(root)


def test_dataset_254_samples_keep_family(tmp_path):
    from geobuckle.pipeline import design_params, generate_dataset

    params = design_params("four_param", 254, seed=0)
    ds = generate_dataset(params, 4, 8, 3)
    write_dataset(ds, tmp_path / "big", "four_param")
    back = read_dataset(tmp_path / "big")
    assert len(back) == 254 and all(s.params.family == "four_param" for s in back)
    assert read_manifest(tmp_path / "big")["family"] == "four_param"


# --- checkpoints ---------------------------------------------------------------------


def _stats(samples):
    return normalize_fit(samples)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_checkpoint_roundtrip_bitwise(samples, tmp_path, dtype):
    model = HybridModel.initialize(TOY_MODEL, 3, dtype)
    path = save_checkpoint(model, _stats(samples), tmp_path / "m.ckpt", extra={"note": "x"})
    back, stats, extra = load_checkpoint(path)
    assert extra == {"note": "x"} and stats.equals(_stats(samples))
    assert all(back.params[k].tobytes() == v.tobytes() and back.params[k].dtype == v.dtype
               for k, v in model.params.items())
    g = np.random.default_rng(0).normal(size=(20, 6)).astype(dtype)
    t = np.linspace(0, 1, 5).astype(dtype)
    a, b = model.forward(g, t), back.forward(g, t)
    assert a.u.tobytes() == b.u.tobytes() and a.force.tobytes() == b.force.tobytes()
    save_checkpoint(back, stats, tmp_path / "m2.ckpt", extra={"note": "x"})
    assert (tmp_path / "m2.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_truncated(samples, tmp_path):
    path = save_checkpoint(HybridModel.initialize(TOY_MODEL, 0), _stats(samples), tmp_path / "m.ckpt")
    raw = path.read_bytes()
    for cut in (4, 30, len(raw) - 3):
        bad = tmp_path / f"cut{cut}.ckpt"
        bad.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)


def test_checkpoint_bad_magic_and_version(samples, tmp_path):
    raw = save_checkpoint(HybridModel.initialize(TOY_MODEL, 0), None, tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "magic.ckpt").write_bytes(b"NOTACKPT" + raw[8:])
    (tmp_path / "ver.ckpt").write_bytes(raw[:8] + (7).to_bytes(4, "little") + raw[12:])
    (tmp_path / "extra.ckpt").write_bytes(raw + b"\x00")
    for name in ("magic", "ver", "extra"):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / f"{name}.ckpt")


def test_checkpoint_config_mismatch(tmp_path):
    path = save_checkpoint(HybridModel.initialize(TOY_MODEL, 0), None, tmp_path / "m.ckpt")
    with pytest.raises(ShapeMismatchError):
        load_checkpoint(path, expect=DESK_MODEL)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect=DESK_MODEL)
