"""Command-line entry points: gen-sbm, train, eval, sweep, oracle.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from agnn import oracle
from agnn.data import Split, generate_sbm, load_dataset, make_split, write_dataset
from agnn.errors import DataError, NumericError
from agnn.graph import normalize
from agnn.trainer import TrainConfig, evaluate, init_model, load_model, mad, save_model, scores, train

log = logging.getLogger("agnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SWEEP_HEADER = ["layers", "model", "seed", "train_acc", "val_acc", "test_acc", "mad_final", "epochs"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _seed(args) -> int:
    env = os.environ.get("AGNN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"AGNN_SEED must be an integer, got {env!r}") from None
    return args.seed


def _load_config(path, **overrides) -> TrainConfig:
    base = {}
    if path:
        try:
            base = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad config: {exc}") from None


def _load_split(path) -> Split:
    try:
        return Split.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise DataError(f"split file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _dataset_and_split(args, seed):
    for attr in ("edges", "features", "labels"):
        if not Path(getattr(args, attr)).is_file():
            raise DataError(f"--{attr}: no such file {getattr(args, attr)}")
    ds = load_dataset(args.edges, args.features, args.labels)
    if args.split:
        split = _load_split(args.split)
    else:
        split = make_split(ds.labels, args.per_class, args.valid, args.test, seed=seed)
    return ds, split


def run_one(ds, split, config: TrainConfig, layers: int, plain_gcn: bool):
    ops = normalize(ds.graph)
    model = init_model(ds.m, ds.r_classes, layers, config, plain_gcn=plain_gcn)
    model, history = train(model, ops, ds, split, config)
    s, fwd, weights = scores(model, ops, ds, split.train)
    labels = ds.labels

    def acc(idx):
        return float(np.mean(np.argmax(s[idx], 1) == labels[idx])) if len(idx) else float("nan")

    metrics = {
        "model": "gcn" if plain_gcn else "agnn",
        "layers": layers,
        "seed": config.seed,
        "train_acc": acc(split.train),
        "val_acc": acc(split.valid),
        "test_acc": acc(split.test),
        "mad_final": mad(fwd.final_embedding),
        "epochs": len(history),
        "best_epoch": history.best_epoch,
        "classifier_weights": None if weights is None else [float(w) for w in weights],
    }
    return model, history, metrics


def cmd_gen_sbm(args) -> int:
    ds = generate_sbm(args.n, args.classes, args.p_in, args.p_out, args.m, args.feature_signal, _seed(args))
    paths = write_dataset(ds, args.out)
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return EXIT_OK


def cmd_train(args) -> int:
    seed = _seed(args)
    ds, split = _dataset_and_split(args, seed)
    config = _load_config(args.config, seed=seed, max_epochs=args.epochs, hidden=args.hidden,
                          lr=args.lr, lam=args.lam, rho=args.rho)
    model, history, metrics = run_one(ds, split, config, args.layers, args.gcn)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    atomic_write(out / "history.csv", history.to_csv())
    atomic_write(out / "split.json", json.dumps(split.to_dict()) + "\n")
    atomic_write(out / "config.json", json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    atomic_write(out / "data.json", json.dumps({
        "edges": str(Path(args.edges).resolve()),
        "features": str(Path(args.features).resolve()),
        "labels": str(Path(args.labels).resolve()),
    }, indent=2) + "\n")
    save_model(model, out)
    print(json.dumps({k: metrics[k] for k in ("layers", "seed", "val_acc", "test_acc")}))
    return EXIT_OK


def cmd_eval(args) -> int:
    model_dir = Path(args.model_dir)
    if not (model_dir / "model.json").is_file():
        raise DataError(f"{model_dir}: not a model directory (model.json missing)")
    data = json.loads((model_dir / "data.json").read_text()) if (model_dir / "data.json").is_file() else {}
    paths = [args.edges or data.get("edges"), args.features or data.get("features"),
             args.labels or data.get("labels")]
    if not all(paths):
        raise DataError("dataset paths unknown; pass --edges/--features/--labels")
    ds = load_dataset(*paths)
    split = _load_split(args.split or model_dir / "split.json")
    model = load_model(model_dir)
    ops = normalize(ds.graph)
    result = {}
    for name in ("train", "valid", "test"):
        idx = getattr(split, name)
        result[f"{name}_acc"] = evaluate(model, ops, ds, split.train, idx) if len(idx) else None
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def _sweep_job(job):
    ds, split, config, layers, plain_gcn = job
    _, _, metrics = run_one(ds, split, config, layers, plain_gcn)
    return metrics


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"{flag} must be a comma-separated list of integers, got {text!r}") from None


def cmd_sweep(args) -> int:
    layers_list = _int_list(args.layers_list, "--layers-list")
    seeds = _int_list(args.seeds, "--seeds") if args.seeds else [_seed(args)]
    for layers in layers_list:
        if layers < 2 or layers % 2:
            raise UsageError(f"AGNN layer counts must be even and >= 2, got {layers}")
    jobs = []
    for seed in seeds:
        ds, split = _dataset_and_split(args, seed)
        config = _load_config(args.config, seed=seed, max_epochs=args.epochs, hidden=args.hidden,
                              lr=args.lr, lam=args.lam, rho=args.rho)
        for layers in layers_list:
            jobs.append((ds, split, config, layers, False))
            if args.with_gcn_baseline:
                jobs.append((ds, split, config, layers, True))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(job) for job in jobs]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_HEADER, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "sweep.csv", buf.getvalue())
    print(str(out / "sweep.csv"))
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.theta < 0:
        raise UsageError(f"--theta must be >= 0, got {args.theta}")
    report = oracle.run_checks(seed=_seed(args), instances=args.instances, theta=args.theta)
    text = oracle.report_json(report)
    if args.out:
        out = Path(args.out)
        if out.suffix != ".json":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "oracle.json"
        atomic_write(out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all(r["pass"] for r in report) else EXIT_NUMERIC


def _add_data_args(p):
    p.add_argument("--edges", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", help="split JSON; otherwise a stratified split is drawn")
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--valid", type=int, default=500)
    p.add_argument("--test", type=int, default=1000)
    p.add_argument("--config", help="JSON with TrainConfig fields")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, help="override max_epochs")
    p.add_argument("--hidden", type=int, help="override hidden width")
    p.add_argument("--lr", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-sbm", help="write a synthetic SBM dataset")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--p-in", type=float, default=0.10)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--feature-signal", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_sbm)

    p = sub.add_parser("train", help="train one model")
    _add_data_args(p)
    p.add_argument("--layers", type=int, default=2, help="total layers (2t for AGNN)")
    p.add_argument("--gcn", action="store_true", help="plain GCN stack instead of AGNN")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train over several depths")
    _add_data_args(p)
    p.add_argument("--layers-list", default="2,4,6,8,10,12,14,16,18,20")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--with-gcn-baseline", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="run the dense verification checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--theta", type=float, default=0.1, help="l1 weight in the sparse-coding problem")
    p.add_argument("--out", help="output JSON file or directory (default: stdout)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("eval", help="accuracy of a trained model")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--split", help="split JSON (default: the one saved with the model)")
    p.add_argument("--edges")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"agnn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"agnn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"agnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"agnn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
