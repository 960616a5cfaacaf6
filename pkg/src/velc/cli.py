"""Command-line entry point: prepare, train, score, eval, sweep, export-recon.

Every command writes plain text.  Failures print a single line
``error: <CODE>: <context>`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as data_mod
from .data import DataFormatError, SplitSpec
from .diffengine import ShapeError
from .evaluation import EvalReport, auc, evaluate
from .model import CheckpointError, VelcConfig, VelcModel, forward
from .scoring import ScoreParams, combine, error_components, read_scores, score_dataset, write_scores
from .train import PRESETS, NonFiniteLossError, TrainConfig, config_items, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("velc")

EXIT_CODES = {
    "USAGE": 2,
    "CONFIG": 3,
    "PARSE": 4,
    "IO": 5,
    "CHECKPOINT": 6,
    "NONFINITE": 7,
    "INPUT": 8,
}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one-line usage errors instead of the usage dump
        raise CliError("USAGE", f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# config handling

_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_MODEL_FIELDS = {"use_c2", "latent_loss", "squared_norms"}


def _coerce(key: str, raw: str, like):
    if isinstance(like, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise CliError("CONFIG", f"{key}: expected a boolean, got {raw!r}")
    try:
        return type(like)(raw.strip())
    except ValueError:
        raise CliError("CONFIG", f"{key}: cannot parse {raw!r} as {type(like).__name__}") from None


def read_config(path: str | Path | None) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment.  No section headers needed."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError("IO", f"config file {p} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string("[velc]\n" + p.read_text(), source=str(p))
    except configparser.Error as exc:
        raise CliError("CONFIG", f"{p}: {exc}".replace("\n", " ")) from None
    return dict(cp["velc"])


def parse_overrides(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise CliError("CONFIG", f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_train_config(raw: dict[str, str], seed: int | None) -> tuple[TrainConfig, dict]:
    """TrainConfig and model overrides from merged config values.

    A ``preset`` key picks the base hyperparameters; other keys override it.
    """
    raw = dict(raw)
    preset = raw.pop("preset", "ucr")
    if preset not in PRESETS:
        raise CliError("CONFIG", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = TrainConfig(**PRESETS[preset])
    values: dict = {}
    model: dict = {}
    defaults = VelcConfig(T=1)
    for k, v in raw.items():
        if k in _TRAIN_FIELDS:
            values[k] = _coerce(k, v, getattr(base, k))
        elif k in _MODEL_FIELDS:
            model[k] = _coerce(k, v, getattr(defaults, k))
        else:
            raise CliError("CONFIG", f"unknown config key {k!r}")
    if seed is not None:
        values["seed"] = seed
    try:
        return dataclasses.replace(base, **values), model
    except ValueError as exc:
        raise CliError("CONFIG", str(exc)) from None


def score_params(args) -> ScoreParams:
    alpha, beta = args.alpha, args.beta
    if alpha is None and beta is None:
        alpha = ScoreParams.alpha
    if alpha is None:
        alpha = 1.0 - beta
    if beta is None:
        beta = 1.0 - alpha
    try:
        return ScoreParams(alpha, beta, args.phi)
    except ValueError as exc:
        raise CliError("CONFIG", str(exc)) from None


def write_manifest(path: Path, items: Sequence[tuple[str, object]]) -> None:
    path.write_text("".join(f"{k} = {v}\n" for k, v in items))


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def _load_dataset(path: str | Path) -> data_mod.Dataset:
    p = Path(path)
    if not p.is_file():
        raise CliError("IO", f"dataset file {p} not found")
    return data_mod.read_canonical(p)


def _load_model(path: str | Path) -> VelcModel:
    p = Path(path)
    if not p.is_file():
        raise CliError("IO", f"checkpoint {p} not found")
    return load_checkpoint(p)


def _out_dir(path: str | Path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args) -> int:
    """Load raw files, relabel, split and scale; write train/test plus a manifest."""
    for p in args.inputs:
        if not Path(p).is_file():
            raise CliError("IO", f"input file {p} not found")
    if args.kind == "kdd99":
        if len(args.inputs) != 1:
            raise CliError("USAGE", "kdd99 takes exactly one input file")
        d = data_mod.load_kdd99(args.inputs[0], name=args.name or "KDD99")
    else:
        d = data_mod.load_ucr(args.inputs, name=args.name)
    spec = SplitSpec(test_fraction=args.test_fraction, seed=0 if args.seed is None else args.seed)
    full = data_mod.relabel_minority(d) if d.labels is None else d
    train_d, test_d, _ = data_mod.scale_and_split(full, spec)
    out = _out_dir(args.out)
    data_mod.write_canonical(train_d, out / "train.tsv")
    data_mod.write_canonical(test_d, out / "test.tsv")
    items = [
        ("command", "prepare"),
        ("kind", args.kind),
        ("inputs", ",".join(str(p) for p in args.inputs)),
        ("name", full.name),
        ("seed", spec.seed),
        ("test_fraction", spec.test_fraction),
        ("T", full.T),
        ("size", full.size),
        ("anomaly_ratio", f"{full.anomaly_ratio:.6f}"),
        ("anomaly_class", ",".join(sorted({c for c, y in zip(full.classes, full.labels) if y == 1}))),
        ("n_train", train_d.size),
        ("n_test", test_d.size),
        ("n_test_anomalous", int(test_d.labels.sum())),
    ]
    write_manifest(out / "manifest.txt", items)
    print(f"{full.name}: T={full.T} size={full.size} anomaly_ratio={full.anomaly_ratio:.4f} "
          f"train={train_d.size} test={test_d.size}")
    return 0


def cmd_train(args) -> int:
    raw = {**read_config(args.config), **parse_overrides(args.set)}
    cfg, model_overrides = build_train_config(raw, args.seed)
    d = _load_dataset(args.data)
    try:
        m = VelcModel.init(cfg.model_config(d.T, **model_overrides), seed=cfg.seed)
    except ValueError as exc:
        raise CliError("CONFIG", str(exc)) from None
    out = _out_dir(args.out)
    write_manifest(
        out / "manifest.txt",
        [("command", "train"), ("data", args.data)]
        + config_items(cfg)
        + [(f"model.{k}", v) for k, v in config_items(m.config)],
    )
    m, log = train(m, d, cfg)
    save_checkpoint(m, out / "model.ckpt")
    log.write(out / "train_log.tsv")
    last = log.records[-1]
    print(f"trained {cfg.iterations} iterations; final total loss {last['total']:.6g}")
    return 0


def cmd_score(args) -> int:
    p = score_params(args)
    m = _load_model(args.checkpoint)
    d = _load_dataset(args.data)
    if d.T != m.config.T:
        raise CliError("CONFIG", f"dataset T={d.T} does not match checkpoint T={m.config.T}")
    records = score_dataset(m, d.X, p, labels=d.labels, ids=d.ids)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scores(out, records, p)
    print(f"scored {len(records)} series; {sum(r.flag for r in records)} flagged at phi={p.phi}")
    return 0


def _labelled(records):
    labels = np.array([r.label for r in records])
    if np.any(labels < 0):
        raise CliError("INPUT", "score file has records without labels")
    return labels


def cmd_eval(args) -> int:
    path = Path(args.scores)
    if not path.is_file():
        raise CliError("IO", f"score file {path} not found")
    records = read_scores(path)
    labels = _labelled(records)
    try:
        rep = evaluate(args.name or path.stem, [r.raw for r in records], labels)
    except ValueError as exc:
        raise CliError("INPUT", f"{path}: {exc}") from None
    line = "\t".join(rep.row())
    print("\t".join(EvalReport.COLUMNS))
    print(line)
    if args.out:
        out = Path(args.out)
        new = not out.exists() or out.stat().st_size == 0
        with open(out, "a") as fh:
            if new:
                fh.write("\t".join(EvalReport.COLUMNS) + "\n")
            fh.write(line + "\n")
    return 0


def parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError("CONFIG", f"cannot parse alpha grid {text!r}") from None
    if not grid:
        raise CliError("CONFIG", "alpha grid is empty")
    bad = [a for a in grid if not 0.0 < a < 1.0]
    if bad:
        raise CliError("CONFIG", f"alpha grid values must lie in (0, 1): {bad}")
    return grid


def sweep_table(rec: np.ndarray, lat: np.ndarray, labels: np.ndarray, grid: Sequence[float]):
    """(alpha, beta, AUC) rows re-weighting cached error components."""
    rows = []
    for a in grid:
        p = ScoreParams.from_alpha(a)
        rows.append((p.alpha, p.beta, auc(combine(rec, lat, p), labels)))
    return rows


def cmd_sweep(args) -> int:
    grid = parse_grid(args.grid)
    if args.scores:
        records = read_scores(args.scores)
        labels = _labelled(records)
        rec = np.array([r.rec_l1 for r in records])
        lat = np.array([r.lat_l1 for r in records])
    else:
        if not (args.checkpoint and args.data):
            raise CliError("USAGE", "sweep needs --scores, or both --checkpoint and --data")
        m = _load_model(args.checkpoint)
        d = _load_dataset(args.data)
        if d.T != m.config.T:
            raise CliError("CONFIG", f"dataset T={d.T} does not match checkpoint T={m.config.T}")
        labels = d.labels
        rec, lat = error_components(m, d.X)
    try:
        rows = sweep_table(rec, lat, labels, grid)
    except ValueError as exc:
        raise CliError("INPUT", str(exc)) from None
    lines = ["alpha\tbeta\tauc"] + [f"{a:.12g}\t{b:.12g}\t{v!r}" for a, b, v in rows]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


def cmd_export_recon(args) -> int:
    m = _load_model(args.checkpoint)
    d = _load_dataset(args.data)
    if d.T != m.config.T:
        raise CliError("CONFIG", f"dataset T={d.T} does not match checkpoint T={m.config.T}")
    try:
        ids = [int(v) for v in args.ids.split(",") if v.strip()]
    except ValueError:
        raise CliError("CONFIG", f"cannot parse sample ids {args.ids!r}") from None
    if not ids:
        raise CliError("CONFIG", "no sample ids given")
    try:
        pos = data_mod.iter_ids(d, ids)
    except KeyError as exc:
        raise CliError("INPUT", exc.args[0]) from None
    out = forward(m, d.X[pos], mode="eval")
    recon = out.x_recon.data
    with open(args.out, "w") as fh:
        fh.write("id\tlabel\tt\tx\tx_recon\n")
        for k, i in enumerate(ids):
            for t in range(d.T):
                fh.write(f"{i}\t{d.labels[pos[k]]}\t{t}\t{d.X[pos[k], t]:.17g}\t{recon[k, t]:.17g}\n")
    print(f"exported {len(ids)} series of length {d.T}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed threaded through all randomness")
    common.add_argument("-v", "--verbose", action="store_true")

    scoring = _Parser(add_help=False)
    scoring.add_argument("--alpha", type=float, default=None, help="reconstruction weight (default 0.6)")
    scoring.add_argument("--beta", type=float, default=None, help="latent weight (default 1 - alpha)")
    scoring.add_argument("--phi", type=float, default=0.5, help="threshold on normalized scores")

    parser = _Parser(prog="velc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", parents=[common], help="split and scale a raw dataset")
    p.add_argument("inputs", nargs="+", help="raw data file(s); UCR TRAIN and TEST files are pooled")
    p.add_argument("--kind", choices=("ucr", "kdd99"), default="ucr", help="dataset kind")
    p.add_argument("--name", default=None)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train a model on a prepared train file")
    p.add_argument("--data", required=True, help="canonical train file")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[common, scoring], help="score a prepared test file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="score file")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", parents=[common], help="AUC report from a score file")
    p.add_argument("scores")
    p.add_argument("--name", default=None, help="dataset name in the report row")
    p.add_argument("--out", default=None, help="append the report row to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="AUC over a grid of alpha (beta = 1 - alpha)")
    p.add_argument("--scores", default=None, help="score file with cached error components")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--grid", default="0.2,0.3,0.4,0.5,0.6,0.7,0.8")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-recon", parents=[common], help="original and reconstructed series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ids", required=True, help="comma-separated sample ids")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_recon)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except DataFormatError as exc:
        code, msg = "PARSE", str(exc)
    except CheckpointError as exc:
        code, msg = "CHECKPOINT", str(exc)
    except NonFiniteLossError as exc:
        code, msg = "NONFINITE", str(exc)
    except ShapeError as exc:
        code, msg = "CONFIG", str(exc)
    except OSError as exc:
        code, msg = "IO", str(exc)
    except ValueError as exc:
        code, msg = "INPUT", str(exc)
    print(f"error: {code}: {' '.join(msg.split())}", file=sys.stderr)
    return EXIT_CODES[code]


if __name__ == "__main__":
    sys.exit(main())
