"""Command-line interface.

Subcommands: gen-data, train, eval, ablate. Exit codes: 0 success,
1 usage error, 2 config validation, 3 data/format error, 4 numerical
failure. Output files carry no timestamps so reruns with the same seed,
config, and dataset are byte-identical; wall-clock info goes to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

from . import checkpoint as ckpt_io
from . import plots
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    DataFormatError,
    NumericalError,
    ScreidError,
    UsageError,
)
from .evaluation import evaluate_retrieval
from .synthdata import generate_dataset, load_dataset, save_dataset
from .trainer import EpochRecord, train

_EXIT_CODES = [
    (UsageError, 1),
    (ConfigError, 2),
    (DataFormatError, 3),
    (NumericalError, 4),
]

# parameters ablate accepts with --param, and how to parse their values
_SWEEP_CASTERS = {
    "lambda_c": float,
    "lambda_t": float,
    "tau": float,
    "beta": float,
    "lambda_p": float,
    "n_plus": int,
}


def _cast_n_minus(text: str):
    return "all" if text == "all" else int(text)


_SWEEP_CASTERS["n_minus"] = _cast_n_minus


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _figure_path(output_path: str) -> str:
    root, _ = os.path.splitext(output_path)
    return root + ".png"


def _write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _metrics_csv(records: list[EpochRecord]) -> str:
    lines = ["epoch,phase,loss_global,loss_local,loss_total"]
    for r in records:
        lines.append(f"{r.epoch},{r.phase},{r.loss_global!r},{r.loss_local!r},{r.loss_total!r}")
    return "\n".join(lines) + "\n"


def _report_json(report_dict: dict) -> str:
    return json.dumps(report_dict, indent=2, sort_keys=True) + "\n"


def _load_base_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
        cfg.validate()
    return cfg


# -- subcommands -----------------------------------------------------------


def _cmd_gen_data(args) -> int:
    cfg = _load_base_config(args)
    splits = generate_dataset(cfg.dataset_spec())
    out = args.out or cfg.dataset_path
    if out is None:
        raise UsageError("gen-data needs --out or a dataset_path config key")
    save_dataset(out, splits)
    print(
        f"wrote {len(splits.train)} train / {len(splits.query)} query / "
        f"{len(splits.gallery)} gallery samples to {out}"
    )
    return 0


def _cmd_train(args) -> int:
    loaded = None
    if args.resume is not None:
        if args.config is not None or args.seed is not None:
            raise UsageError("--resume takes config and seed from the checkpoint")
        loaded = ckpt_io.load_checkpoint(args.resume)
        cfg = loaded.run_config
        if args.epochs is not None:
            cfg = dataclasses.replace(cfg, epochs=args.epochs)
            cfg.validate()
        if loaded.epochs_completed >= cfg.epochs:
            raise ConfigError(
                f"checkpoint already covers {loaded.epochs_completed} epochs; "
                f"target is {cfg.epochs}"
            )
    else:
        cfg = _load_base_config(args)
    data_path = args.data or cfg.dataset_path
    if data_path is None:
        raise UsageError("train needs --data or a dataset_path config key")
    splits = load_dataset(data_path)
    started = time.monotonic()
    if loaded is not None:
        if loaded.banks.num_samples != len(splits.train):
            raise DataFormatError(
                f"checkpoint was trained on {loaded.banks.num_samples} samples, "
                f"dataset has {len(splits.train)}"
            )
        result = train(
            splits.train,
            cfg.model_dims(),
            cfg.train_config(len(splits.train)),
            state=(loaded.params, loaded.banks, loaded.optimizer),
            start_epoch=loaded.epochs_completed,
            records=loaded.records,
        )
    else:
        result = train(splits.train, cfg.model_dims(), cfg.train_config(len(splits.train)))
    elapsed = time.monotonic() - started
    out = args.out or cfg.checkpoint_path
    if out is None:
        raise UsageError("train needs --out or a checkpoint_path config key")
    ckpt_io.save_checkpoint(
        out,
        result.params,
        result.banks,
        result.optimizer,
        result.records,
        epochs_completed=cfg.epochs,
        config_dict=cfg.to_dict(),
    )
    metrics_path = args.metrics or cfg.metrics_path or out + ".metrics.csv"
    _write_text(metrics_path, _metrics_csv(result.records))
    if not args.no_figures:
        plots.save_loss_curves(result.records, _figure_path(metrics_path))
    final = result.records[-1]
    print(f"trained {cfg.epochs} epochs; final loss {final.loss_total!r}")
    print(f"checkpoint: {out}\nmetrics: {metrics_path}")
    print(f"wall clock: {elapsed:.1f}s", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    loaded = ckpt_io.load_checkpoint(args.ckpt)
    cfg = loaded.run_config
    data_path = args.data or cfg.dataset_path
    if data_path is None:
        raise UsageError("eval needs --data or a dataset_path config key")
    splits = load_dataset(data_path)
    report = evaluate_retrieval(
        splits.query,
        splits.gallery,
        loaded.params,
        append_local=args.append_local or cfg.eval_append_local,
        exclude_same_camera=cfg.eval_exclude_same_camera and not args.include_same_camera,
    )
    text = _report_json(report.to_dict())
    sys.stdout.write(text)
    report_path = args.report or cfg.report_path
    if report_path is not None:
        _write_text(report_path, text)
        if not args.no_figures:
            plots.save_eval_figure(report.to_dict(), _figure_path(report_path))
    return 0


def _sweep_settings(args) -> tuple[str, list[tuple[str, dict]]]:
    """Returns (parameter label, [(value label, config overrides), ...])."""
    if args.preset is not None:
        if args.param is not None or args.values is not None:
            raise UsageError("--preset and --param/--values are mutually exclusive")
        if args.preset == "table4":
            return "features", [
                ("global-only", {"beta": 1.0, "lambda_p": 0.0, "mixture_features": "global"}),
                ("local-only", {"beta": 0.0, "lambda_p": 1.0, "mixture_features": "local"}),
                ("joint", {}),
            ]
        return "selection", [
            ("1/all", {"n_plus": 1, "n_minus": "all"}),
            ("7/all", {"n_plus": 7, "n_minus": "all"}),
            ("7/500", {"n_plus": 7, "n_minus": 500}),
        ]
    if args.param is None or args.values is None:
        raise UsageError("ablate needs --param and --values, or --preset")
    caster = _SWEEP_CASTERS.get(args.param)
    if caster is None:
        raise UsageError(
            f"--param must be one of {', '.join(sorted(_SWEEP_CASTERS))}; got {args.param!r}"
        )
    settings = []
    for chunk in args.values.split(","):
        chunk = chunk.strip()
        try:
            value = caster(chunk)
        except ValueError:
            raise UsageError(f"bad value {chunk!r} for --param {args.param}") from None
        settings.append((chunk, {args.param: value}))
    if not settings:
        raise UsageError("--values is empty")
    return args.param, settings


def _parse_seeds(text: str | None, default_seed: int) -> list[int]:
    if text is None:
        return [default_seed]
    try:
        seeds = [int(chunk) for chunk in text.split(",") if chunk.strip() != ""]
    except ValueError:
        raise UsageError(f"bad --seeds value {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def _cmd_ablate(args) -> int:
    cfg = _load_base_config(args)
    data_path = args.data or cfg.dataset_path
    if data_path is None:
        raise UsageError("ablate needs --data or a dataset_path config key")
    splits = load_dataset(data_path)
    parameter, settings = _sweep_settings(args)
    seeds = _parse_seeds(args.seeds, cfg.seed)
    lines = ["parameter,value,seeds,rank1,mAP"]
    rows_for_figure = []
    for value_label, overrides in settings:
        rank1_sum = 0.0
        map_sum = 0.0
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, seed=seed, **overrides)
            run_cfg.validate()
            result = train(
                splits.train, run_cfg.model_dims(), run_cfg.train_config(len(splits.train))
            )
            report = evaluate_retrieval(
                splits.query,
                splits.gallery,
                result.params,
                append_local=run_cfg.eval_append_local,
                exclude_same_camera=run_cfg.eval_exclude_same_camera,
            )
            rank1_sum += report.rank1
            map_sum += report.mAP
            print(
                f"{parameter}={value_label} seed={seed}: "
                f"rank1={report.rank1!r} mAP={report.mAP!r}",
                file=sys.stderr,
            )
        rank1 = rank1_sum / len(seeds)
        m_ap = map_sum / len(seeds)
        seeds_label = ";".join(str(s) for s in seeds)
        lines.append(f"{parameter},{value_label},{seeds_label},{rank1!r},{m_ap!r}")
        rows_for_figure.append({"value": value_label, "rank1": rank1, "mAP": m_ap})
    csv_text = "\n".join(lines) + "\n"
    _write_text(args.out, csv_text)
    if not args.no_figures:
        plots.save_sweep_figure(rows_for_figure, parameter, _figure_path(args.out))
    sys.stdout.write(csv_text)
    return 0


# -- parser wiring ---------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="screid", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    gen.add_argument("--config", help="JSON config path (defaults used when omitted)")
    gen.add_argument("--seed", type=int, help="override the config seed")
    gen.add_argument("--out", help="output dataset path")
    gen.set_defaults(func=_cmd_gen_data)

    tr = sub.add_parser("train", help="train on a dataset file")
    tr.add_argument("--config", help="JSON config path")
    tr.add_argument("--data", help="dataset path")
    tr.add_argument("--out", help="checkpoint output path")
    tr.add_argument("--metrics", help="per-epoch metrics CSV path")
    tr.add_argument("--resume", help="checkpoint to continue from (carries its own config)")
    tr.add_argument("--epochs", type=int, help="override total epoch count")
    tr.add_argument("--seed", type=int, help="override the config seed")
    tr.add_argument("--no-figures", action="store_true", help="skip the loss-curve figure")
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on held-out queries")
    ev.add_argument("--ckpt", required=True, help="checkpoint path")
    ev.add_argument("--data", help="dataset path")
    ev.add_argument("--report", help="JSON report output path (stdout always gets a copy)")
    ev.add_argument("--append-local", action="store_true",
                    help="concatenate stripe keys onto global keys for retrieval")
    ev.add_argument("--include-same-camera", action="store_true",
                    help="keep same-identity same-camera gallery entries")
    ev.add_argument("--no-figures", action="store_true", help="skip the report figure")
    ev.set_defaults(func=_cmd_eval)

    ab = sub.add_parser("ablate", help="sweep one hyperparameter or run a preset")
    ab.add_argument("--config", help="JSON config path")
    ab.add_argument("--data", help="dataset path")
    ab.add_argument("--param", help=f"one of {', '.join(sorted(_SWEEP_CASTERS))}")
    ab.add_argument("--values", help="comma-separated values for --param")
    ab.add_argument("--preset", choices=["table4", "table5"],
                    help="table4: global/local/joint features; table5: positives/negatives budget")
    ab.add_argument("--seeds", help="comma-separated training seeds (default: config seed)")
    ab.add_argument("--epochs", type=int, help="override total epoch count")
    ab.add_argument("--out", default="ablate.csv", help="sweep CSV output path")
    ab.add_argument("--no-figures", action="store_true", help="skip the sweep figure")
    ab.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("missing subcommand (gen-data | train | eval | ablate)")
        return args.func(args)
    except ScreidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for etype, code in _EXIT_CODES:
            if isinstance(exc, etype):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
