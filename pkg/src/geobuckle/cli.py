"""Command-line entry point: ``geobuckle {gen-data,train,eval,predict,gradcheck}``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import MODEL_PRESETS, TrainConfig, train_preset
from .errors import CheckpointError, GeobuckleError, InputError, IntegrityError, NumericError
from .geometry import PARAM_NAMES, TWO_PARAM_DEFAULTS, BottleParams, generate_bottle
from .gradcheck import run_gradcheck
from .model import HybridModel
from .pipeline import (OraclePredictor, Surrogate, design_params, evaluate, generate_dataset,
                       load_checkpoint, read_dataset, save_checkpoint, split_dataset, train,
                       write_dataset)
from .pipeline.data import read_manifest

log = logging.getLogger("geobuckle")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INTEGRITY = 4
EXIT_NUMERIC = 5


class UsageError(GeobuckleError):
    pass


class ExtrapolationWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, config: dict, seeds: dict, inputs: dict,
                    artifacts: list[Path], started: str) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "inputs": inputs,
        "outputs": str(out),
        "artifacts": {str(p.relative_to(out)): _sha256(p) for p in sorted(artifacts)},
    }
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _resolution(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 64x16, got {text!r}") from None


def _times(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad time list {text!r}") from None


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else f"{v:.9g}" for v in r])
    return path


def _load_checkpoint(path):
    if path is None:
        raise UsageError("--checkpoint is required")
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    model, stats, extra = load_checkpoint(path)
    if stats is None:
        raise CheckpointError("checkpoint carries no normalization statistics")
    return model, stats, extra


def _load_dataset(path) -> list:
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    return read_dataset(root)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    started = _now()
    if args.samples is not None and args.samples < 1:
        raise UsageError("--samples must be a positive integer")
    if args.k_per_axis is not None and args.k_per_axis < 2:
        raise UsageError("--k-per-axis must be at least 2")
    if args.family == "four_param" and args.k_per_axis is not None:
        raise UsageError("four_param designs are sampled with --samples (Latin hypercube)")
    if args.samples is None and args.k_per_axis is None:
        raise UsageError("give --samples or --k-per-axis")
    out = _prepare_out(Path(args.out), args.force)
    n_z, n_theta = args.resolution
    params = design_params(args.family, args.samples, args.k_per_axis, args.seed)
    samples = generate_dataset(params, n_z, n_theta, args.time_steps)
    provenance = {
        "generator_seed": args.seed,
        "design": "full_factorial" if args.k_per_axis else "latin_hypercube",
        "k_per_axis": args.k_per_axis,
        "n_samples": len(samples),
        "resolution": [n_z, n_theta],
        "parameter_ranges": _ranges(args.family),
    }
    write_dataset(samples, out, args.family, provenance)
    artifacts = [p for p in out.rglob("*") if p.is_file() and p.name != "run_manifest.json"]
    _write_manifest(out, "gen-data", vars_json(args), {"seed": args.seed}, {}, artifacts, started)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def _ranges(family: str) -> dict:
    from .geometry import design_space

    space = design_space(family)
    return {n: [lo, hi] for n, lo, hi in zip(space.names, space.lo, space.hi)}


def vars_json(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k == "func":
            continue
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, Path):
            v = str(v)
        out[k] = v
    return out


def _train_config(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_json(json.loads(Path(args.config).read_text()))
    else:
        cfg = train_preset(args.preset)
    return cfg.with_overrides(
        epochs=args.epochs, split_seed=args.seed_split, init_seed=args.seed_init,
        precision=args.precision, split_ratio=args.split_ratio, max_lr=args.max_lr,
        eval_interval=args.eval_interval,
    )


def cmd_train(args) -> int:
    started = _now()
    cfg = _train_config(args)
    samples = _load_dataset(args.dataset)
    train_set, test_set = split_dataset(samples, cfg.split_ratio, cfg.split_seed)
    out = _prepare_out(Path(args.out), args.force)

    def progress(entry):
        if args.verbose and entry["epoch"] % max(1, cfg.eval_interval) == 0:
            log.info("epoch %d loss %.5f lr %.3g", entry["epoch"], entry["loss"], entry["lr"])

    model, stats, record = train(cfg, train_set, test_set, progress=progress)
    ckpt = save_checkpoint(model, stats, out / "checkpoint.bin", extra={"train_config": cfg.to_json()})
    stats_path = out / "norm_stats.json"
    stats_path.write_text(json.dumps(stats.to_json(), indent=2))
    curve = _write_rows(out / "training_curve.csv", ["epoch", "loss", "loss_ux", "loss_uy", "loss_uz", "loss_fr", "lr"],
                        [[str(e["epoch"]), e["loss"], e["ux"], e["uy"], e["uz"], e["fr"], e["lr"]]
                         for e in record.epochs])
    evals = _write_rows(out / "eval_curve.csv", ["epoch", "err_ux", "err_uy", "err_uz", "err_fr"],
                        [[str(e["epoch"]), e["err_ux"], e["err_uy"], e["err_uz"], e["err_fr"]]
                         for e in record.evals])
    split = out / "split.json"
    split.write_text(json.dumps({"train": [s.id for s in train_set], "test": [s.id for s in test_set]}, indent=2))
    _write_manifest(out, "train", cfg.to_json(),
                    {"split": cfg.split_seed, "init": cfg.init_seed, "shuffle": cfg.shuffle_seed},
                    {"dataset": str(args.dataset)}, [ckpt, stats_path, curve, evals, split], started)
    if record.epochs:
        print(f"trained {cfg.epochs} epochs on {len(train_set)} samples; final loss {record.epochs[-1]['loss']:.5f}")
    else:
        print("0 epochs: wrote initialization")
    return EXIT_OK


def cmd_eval(args) -> int:
    started = _now()
    samples = _load_dataset(args.dataset)
    if args.oracle:
        predictor = OraclePredictor.for_samples(samples)
        train_cfg = TrainConfig()
    else:
        model, stats, extra = _load_checkpoint(args.checkpoint)
        predictor = Surrogate(model, stats)
        train_cfg = TrainConfig.from_json(extra.get("train_config", {"model": model.config.to_json()}))
    ratio = args.split_ratio if args.split_ratio is not None else train_cfg.split_ratio
    seed = args.seed_split if args.seed_split is not None else train_cfg.split_seed
    if args.subset == "all":
        chosen = samples
    else:
        train_set, test_set = split_dataset(samples, ratio, seed)
        chosen = test_set if args.subset == "test" else train_set

    out = _prepare_out(Path(args.out), args.force)
    report = evaluate(predictor, chosen, node_errors=True)
    metrics = out / "metrics.csv"
    metrics.write_text(report.to_csv())
    artifacts = [metrics]

    fdir = out / "force_curves"
    fdir.mkdir(exist_ok=True)
    ndir = out / "node_errors"
    ndir.mkdir(exist_ok=True)
    scatter_rows = []
    wanted = set(args.node_samples.split(",")) if args.node_samples else {chosen[0].id}
    for s in chosen:
        u_hat, f_hat = predictor.predict(s.points, s.normals, s.times)
        artifacts.append(_write_rows(fdir / f"{s.id}.csv", ["t", "F_ref", "F_pred"],
                                     zip(s.times.astype(float), s.forces.astype(float), f_hat)))
        if s.id in wanted:
            err = report.node_errors[s.id]
            artifacts.append(_write_rows(
                ndir / f"{s.id}.csv", ["x", "y", "z", "abs_err_ux", "abs_err_uy", "abs_err_uz"],
                np.concatenate([s.points.astype(np.float64), err], axis=1)))
        for c, name in enumerate(("ux", "uy", "uz")):
            for j in range(s.n):
                scatter_rows.append([s.id, str(j), name, float(s.disp[j, c]), float(u_hat[j, c])])
    artifacts.append(_write_rows(out / "scatter.csv", ["id", "node", "component", "ref", "pred"], scatter_rows))
    _write_manifest(out, "eval", {"subset": args.subset, "split_ratio": ratio, "oracle": args.oracle},
                    {"split": seed}, {"dataset": str(args.dataset), "checkpoint": str(args.checkpoint)},
                    artifacts, started)
    print(report.table())
    return EXIT_OK


def _parse_params(text: str, family: str) -> BottleParams:
    values = dict(TWO_PARAM_DEFAULTS)
    for item in text.split(","):
        if not item.strip():
            continue
        try:
            k, v = item.split("=")
            values[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"bad parameter assignment {item!r}") from None
    unknown = set(values) - set(PARAM_NAMES)
    if unknown or "r_top" not in values or "d_rib" not in values:
        raise UsageError(f"--params needs r_top and d_rib (and only {PARAM_NAMES})")
    return BottleParams(family=family, **values)


def _read_cloud(path: Path) -> tuple[np.ndarray, np.ndarray]:
    if path.is_dir():
        manifest = read_manifest(path.parent)
        from .pipeline.data import _read_f32

        n = int(manifest["N"])
        return _read_f32(path / "points.f32", n), _read_f32(path / "normals.f32", n)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["x", "y", "z", "nx", "ny", "nz"]:
        raise IntegrityError(f"{path}: expected header x,y,z,nx,ny,nz")
    arr = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    return arr[:, :3].astype(np.float32), arr[:, 3:].astype(np.float32)


def cmd_predict(args) -> int:
    started = _now()
    model, stats, _ = _load_checkpoint(args.checkpoint)
    if (args.params is None) == (args.cloud is None):
        raise UsageError("give exactly one of --params or --cloud")
    if args.params is not None:
        p = _parse_params(args.params, args.family)
        if not p.in_bounds():
            warnings.warn(f"parameters {p} lie outside the {p.family} design space; "
                          "prediction is an extrapolation", ExtrapolationWarning, stacklevel=1)
        n_z, n_theta = args.resolution
        cloud = generate_bottle(p, n_z, n_theta, strict=False)
        points, normals = cloud.points.astype(np.float32), cloud.normals.astype(np.float32)
    else:
        points, normals = _read_cloud(Path(args.cloud))
    times = args.times if args.times is not None else (np.arange(101) / 100.0)
    times = np.asarray(times, dtype=np.float32)
    if np.any(times < 0) or np.any(times > 1):
        raise UsageError("--times values must lie in [0, 1]")
    u, f = Surrogate(model, stats).predict(points, normals, times)
    out = _prepare_out(Path(args.out), args.force)
    disp = _write_rows(out / "displacement.csv", ["x", "y", "z", "ux", "uy", "uz"],
                       np.concatenate([points.astype(np.float64), u], axis=1))
    force = _write_rows(out / "force.csv", ["t", "F"], zip(times.astype(np.float64), f))
    _write_manifest(out, "predict", vars_json(args), {}, {"checkpoint": str(args.checkpoint)},
                    [disp, force], started)
    print(f"wrote predictions for {points.shape[0]} nodes and {times.size} times to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.precision != "f64":
        raise UsageError("gradient checks run in 64-bit precision only")
    started = _now()
    config = MODEL_PRESETS[args.preset]
    if args.corrupt is not None and args.corrupt not in HybridModel.initialize(config).params:
        raise UsageError(f"unknown parameter {args.corrupt!r}")
    report = run_gradcheck(config, args.points, args.time_steps, args.seed, corrupt=args.corrupt)
    for line in report.lines():
        print(line)
    if args.out:
        out = _prepare_out(Path(args.out), args.force)
        path = _write_rows(out / "gradcheck.csv", ["parameter", "relative_error"], report.errors.items())
        _write_manifest(out, "gradcheck", {**vars_json(args), "model": config.to_json(),
                                           "threshold": report.threshold, "passed": report.passed},
                        {"seed": args.seed}, {}, [path], started)
    return EXIT_OK if report.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geobuckle", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--family", choices=("two_param", "four_param"), required=True)
    g.add_argument("--samples", type=int)
    g.add_argument("--k-per-axis", type=int)
    g.add_argument("--resolution", type=_resolution, default=(64, 16), help="NZxNT, e.g. 64x16")
    g.add_argument("--time-steps", type=int, default=101)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the surrogate")
    t.add_argument("--dataset", required=True)
    t.add_argument("--preset", choices=("paper", "desk"), default="desk")
    t.add_argument("--config", help="TrainConfig JSON (overrides --preset)")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed-split", type=int)
    t.add_argument("--seed-init", type=int)
    t.add_argument("--precision", choices=("f32", "f64"))
    t.add_argument("--split-ratio", type=float)
    t.add_argument("--max-lr", type=float)
    t.add_argument("--eval-interval", type=int)
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed-split", type=int)
    e.add_argument("--split-ratio", type=float)
    e.add_argument("--subset", choices=("test", "train", "all"), default="test")
    e.add_argument("--node-samples", help="comma-separated sample ids for per-node error CSVs")
    e.add_argument("--oracle", action="store_true", help="use the synthetic ground truth as the model")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict displacements and force for one geometry")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--params", help="e.g. r_top=30,d_rib=15[,r_rib=3,p_rib=12]")
    p.add_argument("--family", choices=("two_param", "four_param"), default="two_param")
    p.add_argument("--cloud", help="CSV x,y,z,nx,ny,nz or a dataset sample directory")
    p.add_argument("--resolution", type=_resolution, default=(64, 16))
    p.add_argument("--times", type=_times)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_predict)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    c.add_argument("--preset", choices=sorted(MODEL_PRESETS), default="toy")
    c.add_argument("--precision", choices=("f32", "f64"), default="f64")
    c.add_argument("--points", type=int, default=32)
    c.add_argument("--time-steps", type=int, default=8)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", help="optional directory for the report CSV and run manifest")
    c.add_argument("--force", action="store_true")
    c.add_argument("--corrupt", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InputError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrityError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
