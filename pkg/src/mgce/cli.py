"""Command-line entry point: ``mgce <subcommand> [--config FILE] [flags]``.

Configuration is a flat UTF-8 ``key = value`` file. Flags override config
keys, and every run writes the effective values to ``<out>/config.resolved``,
which can be passed back as ``--config`` to reproduce the run.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .data import DataError, SyntheticSpec, gcd_counts, generate_synthetic, load_embeddings, save_embeddings
from .evaluation import count_error_rate, estimate_k, gcd_acc, merge_to_k
from .graph import GraphError
from .infomap import Partition, semi_infomap
from .knn_select import KnnSearchError, select_knn
from .memory import PrototypeError
from .model import Hyper, ModelParams
from .trainer import TrainConfig, TrainingError, inference_features, run

log = logging.getLogger("mgce")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _opt_int(text: str) -> Optional[int]:
    return None if str(text).strip().lower() in ("", "none") else int(text)


def _opt_path(text: str) -> Optional[str]:
    return None if str(text).strip().lower() in ("", "none") else str(text)


# key -> (parser, default); defaults follow the reference training setup
TRAIN_KEYS = {
    "data": (_opt_path, None),
    "out": (str, "out"),
    "checkpoint": (_opt_path, None),
    "epochs": (int, 200),
    "batch_size": (int, 128),
    "lr": (float, 0.05),
    "lambda": (float, 0.35),
    "alpha": (float, 0.1),
    "scale_r": (float, 0.6),
    "delta": (float, 0.6),
    "knn": (_opt_int, None),
    "eta": (float, 0.9),
    "tau_u": (float, 0.07),
    "tau_l": (float, 1.0),
    "tau_s": (float, 0.1),
    "tau_c": (float, 0.05),
    "epsilon": (float, 2.0),
    "seed": (int, 0),
    "k_known": (_bool, False),
    "k": (_opt_int, None),
    "dim": (_opt_int, None),
    "trials": (int, 3),
}

GEN_KEYS = {
    "out": (str, "data"),
    "n_super": (int, 2),
    "classes_per_super": (int, 5),
    "subclasses_per_class": (int, 2),
    "samples_per_subclass": (int, 20),
    "dim": (int, 32),
    "sigma_within": (float, 0.5),
    "sigma_sub": (float, 1.0),
    "sigma_class": (float, 2.0),
    "nuisance_dim": (int, 0),
    "seed": (int, 0),
}

EVAL_KEYS = {
    "data": (_opt_path, None),
    "partition": (_opt_path, None),
    "out": (str, "out"),
}

REPORT_KEYS = {
    "log": (_opt_path, None),
    "out": (str, "out"),
}

KEYS = {
    "gen": GEN_KEYS,
    "select-knn": TRAIN_KEYS,
    "train": TRAIN_KEYS,
    "cluster": TRAIN_KEYS,
    "eval": EVAL_KEYS,
    "estimate-k": EVAL_KEYS,
    "report": REPORT_KEYS,
}

DATA_FILE = "embeddings.bin"


def parse_config_text(text: str, keys: dict) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in keys:
            raise UsageError(f"unknown config key {key!r}")
        values[key] = value
    return values


def resolve(keys: dict, file_values: dict, flag_values: dict) -> dict:
    out = {}
    for key, (conv, default) in keys.items():
        raw = flag_values.get(key, file_values.get(key))
        if raw is None:
            out[key] = default
            continue
        try:
            out[key] = conv(raw)
        except (TypeError, ValueError):
            raise UsageError(f"bad value for {key}: {raw!r}") from None
    return out


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_resolved(cfg: dict, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.resolved"
    lines = [f"{k} = {format_value(v)}" for k, v in sorted(cfg.items())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def hyper_from(cfg: dict) -> Hyper:
    return Hyper(lam=cfg["lambda"], alpha=cfg["alpha"], scale_r=cfg["scale_r"], delta=cfg["delta"],
                 eta=cfg["eta"], tau_u=cfg["tau_u"], tau_l=cfg["tau_l"], tau_s=cfg["tau_s"],
                 tau_c=cfg["tau_c"], epsilon=cfg["epsilon"])


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr0=cfg["lr"],
                       seed=cfg["seed"], k_u_known=cfg["k_known"], k=cfg["k"], knn=cfg["knn"],
                       dim=cfg["dim"], trials=cfg["trials"], hyper=hyper_from(cfg))


def _validate_train(cfg: dict) -> None:
    if cfg["knn"] is not None and cfg["knn"] < 1:
        raise UsageError("knn must be >= 1")
    if not 0.0 <= cfg["delta"] < 1.0:
        raise UsageError("delta must be in [0, 1)")
    if cfg["k"] is not None and cfg["k"] < 1:
        raise UsageError("k must be >= 1")
    try:
        train_config_from(cfg).validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _need(cfg: dict, key: str) -> str:
    if not cfg.get(key):
        raise UsageError(f"missing required setting {key!r}")
    return cfg[key]


def _data_path(text: str) -> Path:
    p = Path(text)
    return p / DATA_FILE if p.is_dir() else p


def write_partition(path: Path, part: Partition) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cluster"])
        for i, c in enumerate(part.assignment):
            w.writerow([i, int(c)])


def read_partition(path, n: int) -> Partition:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        pairs = sorted((int(r["id"]), int(r["cluster"])) for r in rows)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"unreadable partition file: {exc}") from None
    if [i for i, _ in pairs] != list(range(n)):
        raise DataError("partition ids must cover every row")
    return Partition(np.array([c for _, c in pairs], dtype=np.int64))


def _write_rows(path: Path, fields, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: format_value(v) if isinstance(v, float) else v for k, v in row.items()})


# --- subcommands -----------------------------------------------------------

def cmd_gen(cfg: dict) -> int:
    spec = SyntheticSpec(**{k: cfg[k] for k in GEN_KEYS if k != "out"})
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(cfg["out"])
    write_resolved(cfg, out)
    data = generate_synthetic(spec)
    save_embeddings(out / DATA_FILE, data)
    n, m, k_l, k_u = gcd_counts(data)
    print(f"wrote {out / DATA_FILE}: N={n} M={m} K_L={k_l} K_U={k_u}")
    return EXIT_OK


def _features(cfg: dict, data):
    if cfg["checkpoint"]:
        params = _load_checkpoint(cfg["checkpoint"])
        return inference_features(params, data.rows)
    return data.rows


def _load_checkpoint(path) -> ModelParams:
    try:
        return ModelParams.from_bytes(Path(path).read_bytes())
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    except (ValueError, Exception) as exc:  # struct errors on truncated blobs
        raise DataError(f"bad checkpoint: {exc}") from None


def cmd_select_knn(cfg: dict) -> int:
    _validate_train(cfg)
    data = load_embeddings(_data_path(_need(cfg, "data")))
    out = Path(cfg["out"])
    write_resolved(cfg, out)
    report = select_knn(data, _features(cfg, data), cfg["delta"], cfg["seed"])
    report.write_csv(out / "knn_report.csv")
    print(f"chosen knn = {report.chosen}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    _validate_train(cfg)
    data = load_embeddings(_data_path(_need(cfg, "data")))
    out = Path(cfg["out"])
    write_resolved(cfg, out)
    params = _load_checkpoint(cfg["checkpoint"]) if cfg["checkpoint"] else None
    result = run(data, train_config_from(cfg), params=params, evaluate=data.has_ground_truth)
    (out / "checkpoint.bin").write_bytes(result.params.to_bytes())
    result.write_log(out / "train_log.csv")
    if result.epoch_log:
        result.write_epoch_log(out / "epoch_log.csv")
    if result.final_partition is not None:
        write_partition(out / "partition.csv", result.final_partition)
        print(f"K_est = {estimate_k(result.final_partition)}")
    if result.epoch_log and result.epoch_log[-1]["all_acc"] != "":
        last = result.epoch_log[-1]
        print(f"All/Old/New = {last['all_acc']:.4f}/{last['old_acc']:.4f}/{last['new_acc']:.4f}")
    return EXIT_OK


def cmd_cluster(cfg: dict) -> int:
    _validate_train(cfg)
    data = load_embeddings(_data_path(_need(cfg, "data")))
    out = Path(cfg["out"])
    feats = _features(cfg, data)
    knn = cfg["knn"]
    if knn is None:
        knn = select_knn(data, feats, cfg["delta"], cfg["seed"]).chosen
        cfg = dict(cfg, knn=knn)
    write_resolved(cfg, out)
    part = semi_infomap(feats, data.labels, knn, cfg["delta"], cfg["seed"], cfg["trials"])
    if cfg["k_known"] and cfg["k"] and part.k > cfg["k"]:
        part = merge_to_k(part, feats, cfg["k"])
    write_partition(out / "partition.csv", part)
    print(f"communities = {part.k}, K_est = {estimate_k(part)}")
    return EXIT_OK


def _load_eval(cfg: dict):
    data = load_embeddings(_data_path(_need(cfg, "data")))
    part = read_partition(_need(cfg, "partition"), len(data))
    return data, part


def cmd_eval(cfg: dict) -> int:
    data, part = _load_eval(cfg)
    out = Path(cfg["out"])
    write_resolved(cfg, out)
    try:
        rep = gcd_acc(data, part)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _write_rows(out / "eval.csv", ["all_acc", "old_acc", "new_acc", "k_est"], [rep.as_row()])
    print(f"{'All':>8} {'Old':>8} {'New':>8} {'K_est':>6}")
    print(f"{rep.all_acc:8.4f} {rep.old_acc:8.4f} {rep.new_acc:8.4f} {rep.k_est:6d}")
    print(f"All/Old/New = {rep.all_acc:.1f}/{rep.old_acc:.1f}/{rep.new_acc:.1f}")
    return EXIT_OK


def cmd_estimate_k(cfg: dict) -> int:
    data, part = _load_eval(cfg)
    out = Path(cfg["out"])
    write_resolved(cfg, out)
    k_est = estimate_k(part)
    k_true = gcd_counts(data)[3]
    row = {"k_est": k_est, "gt": "" if k_true is None else k_true,
           "err_rate": "" if k_true is None else count_error_rate(k_true, k_est)}
    _write_rows(out / "estimate_k.csv", ["k_est", "gt", "err_rate"], [row])
    msg = f"K_est = {k_est}"
    if k_true is not None:
        msg += f" (gt {k_true}, error {100 * row['err_rate']:.1f}%)"
    print(msg)
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    path = Path(_need(cfg, "log"))
    if path.is_dir():
        path = path / "epoch_log.csv"
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read epoch log: {exc}") from None
    if not rows or "epoch" not in rows[0]:
        raise DataError("epoch log is empty or malformed")
    out = Path(cfg["out"])
    write_resolved(cfg, out)
    _write_rows(out / "acc_vs_epoch.csv", ["epoch", "all_acc", "old_acc", "new_acc", "k_est"],
                [{k: r.get(k, "") for k in ("epoch", "all_acc", "old_acc", "new_acc", "k_est")}
                 for r in rows])
    _write_rows(out / "kg_vs_epoch.csv", ["epoch", "kg1", "kg2", "kg3"],
                [{k: r.get(k, "") for k in ("epoch", "kg1", "kg2", "kg3")} for r in rows])
    print(f"wrote {out / 'acc_vs_epoch.csv'} and {out / 'kg_vs_epoch.csv'}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "select-knn": cmd_select_knn,
    "train": cmd_train,
    "cluster": cmd_cluster,
    "eval": cmd_eval,
    "estimate-k": cmd_estimate_k,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mgce", description="Multi-granularity concept discovery on embeddings.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, keys in KEYS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value file")
        if name == "gen":
            p.add_argument("--spec", dest="config", help="alias of --config")
        for key in keys:
            flag = "--" + key.replace("_", "-")
            if key == "k_known":
                p.add_argument(flag, dest=key, nargs="?", const="true", default=None)
            else:
                p.add_argument(flag, dest=key, default=None)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        keys = KEYS[args.command]
        file_values = {}
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise UsageError(f"cannot read config: {exc}") from None
            file_values = parse_config_text(text, keys)
        flags = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
        cfg = resolve(keys, file_values, flags)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GraphError, KnnSearchError, PrototypeError, TrainingError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
