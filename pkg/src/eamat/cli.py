"""Command-line entry point: generate, train, eval, ablate, sweep, gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import gradcheck as gc
from .config import RunConfig, dump_kv, load_config
from .metrics import THRESHOLDS, MetricReport, evaluate, format_relevance
from .model import Localizer
from .nn import ConfigError
from .query import InputError
from .synth import generate, read_dataset, write_dataset
from .training import NonFiniteError, load_checkpoint, train

log = logging.getLogger("eamat")

ABLATION_ROWS = (
    ("FC Trans", "linear"),
    ("T-Conv Trans", "tconv"),
    ("T-Conv", "tconv_only"),
    ("LSTM", "lstm_only"),
    ("Full", "lstm"),
)
METRIC_HEADER = ("R@1,IoU=0.3", "R@1,IoU=0.5", "R@1,IoU=0.7", "mIoU")
MACHINE_HEADER = ("R@0.3", "R@0.5", "R@0.7", "mIoU")


def _pairs(items: Sequence[str] | None) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = val.strip()
    return out


def _config(args) -> RunConfig:
    overrides = _pairs(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out_dir"] = args.out
    return load_config(args.config, args.preset, overrides)


def _split(cfg: RunConfig, split: str):
    path = getattr(cfg, f"{split}_data")
    if path:
        return read_dataset(path)
    return generate(cfg.gen, split)


def format_table(rows: list[tuple[str, MetricReport]], label: str = "variant") -> str:
    width = max(len(label), *(len(name) for name, _ in rows))
    head = f"{label:<{width}}  " + "  ".join(f"{h:>11}" for h in METRIC_HEADER)
    lines = [head, "-" * len(head)]
    for name, rep in rows:
        lines.append(f"{name:<{width}}  " + "  ".join(f"{v:>11.4f}" for v in rep.row(THRESHOLDS)))
    return "\n".join(lines)


def _machine_rows(rows: list[tuple[str, MetricReport]], label: str) -> str:
    lines = [",".join((label,) + MACHINE_HEADER)]
    for name, rep in rows:
        lines.append(",".join([name] + [repr(v) for v in rep.row(THRESHOLDS)]))
    return "\n".join(lines) + "\n"


def fit(cfg: RunConfig, train_set, val_set=None, out_dir: Path | None = None) -> Localizer:
    model = Localizer(cfg, train_set[0].features.shape[1])
    report = train(model, train_set, cfg, val_set, out_dir,
                   progress=lambda r: log.info("epoch %d step %d loss %.4f", r["epoch"], r["step"], r["loss"]))
    if out_dir:
        (out_dir / "report.csv").write_text(report.to_text())
    return model


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "val", "test"):
        path = out / f"{split}.jsonl"
        write_dataset(path, generate(cfg.gen, split), cfg.gen, split)
        print(path)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_kv(cfg))
    train_set, val_set = _split(cfg, "train"), _split(cfg, "val")
    model = fit(cfg, train_set, val_set, out)
    rep = evaluate(model, val_set).report
    print(f"validation  {rep.summary()}")
    print(f"checkpoint  {out / 'checkpoint.bin'}")
    return 0


def cmd_eval(args) -> int:
    path = Path(args.checkpoint)
    if not path.exists():
        print(f"error: checkpoint not found: {path}", file=sys.stderr)
        return 1
    model = load_checkpoint(path)
    cfg = model.config
    samples = read_dataset(args.data) if args.data else _split(cfg, "test")
    result = evaluate(model, samples)
    print(result.report.summary())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(_machine_rows([("eval", result.report)], "run"))
        with open(out / "predictions.txt", "w") as fh:
            for i, (p, s) in enumerate(zip(result.predictions, samples)):
                fh.write(f"{i}\t{p.to_line(args.dists)}\t{s.start}\t{s.end}\n")
        with open(out / "relevance.txt", "w") as fh:
            for i, scores in enumerate(result.relevance):
                fh.write(f"{i}\t{format_relevance(scores)}\n")
    return 0


def _train_eval(cfg: RunConfig, train_set, test_set) -> MetricReport:
    model = fit(cfg, train_set)
    return evaluate(model, test_set).report


def cmd_ablate(args) -> int:
    cfg = _config(args)
    train_set, test_set = _split(cfg, "train"), _split(cfg, "test")
    rows = []
    for name, variant in ABLATION_ROWS:
        log.info("ablation variant %s", name)
        rows.append((name, _train_eval(replace(cfg, motion_block=variant), train_set, test_set)))
    print(format_table(rows))
    reports = dict(rows)
    ok = reports["Full"].miou >= reports["FC Trans"].miou
    print(f"ordering full >= FC Trans (mIoU): {'ok' if ok else 'FAILED'}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(_machine_rows(rows, "variant"))
    return 0


SWEEPS = {
    "scales": ("scales", [1, 2, 3, 4, 5, 6]),
    "lambda1": ("lambda1", list(range(1, 11))),
    "lambda2": ("lambda2", list(range(1, 11))),
}


def cmd_sweep(args) -> int:
    cfg = _config(args)
    train_set, test_set = _split(cfg, "train"), _split(cfg, "test")
    rows = []
    if args.param == "loss_grid":
        values = [float(v) for v in args.values.split(",")] if args.values else [1.0, 5.0, 10.0]
        grid = [(a, b) for a in values for b in values]
        for a, b in grid:
            rows.append((f"l1={a:g},l2={b:g}", _train_eval(replace(cfg, lambda1=a, lambda2=b), train_set, test_set)))
    else:
        field, defaults = SWEEPS[args.param]
        cast = int if field == "scales" else float
        values = [cast(v) for v in args.values.split(",")] if args.values else defaults
        for v in values:
            run = replace(cfg, **{field: v}).validate()
            rows.append((f"{field}={v:g}", _train_eval(run, train_set, test_set)))
    print(format_table(rows, args.param))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"sweep_{args.param}.csv").write_text(_machine_rows(rows, args.param))
    return 0


def cmd_gradcheck(args) -> int:
    unknown = sorted(set(args.case or ()) - set(gc.CASES))
    if unknown:
        raise ConfigError(f"unknown gradcheck case(s) {unknown}; available: {', '.join(gc.CASES)}")
    results = gc.run_suite(seed=args.seed or 0, names=args.case)
    for r in results:
        print(f"{r.name:28s} rel_err={r.rel_error:.3e} coords={r.checked:5d} {'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file with RunConfig fields")
    common.add_argument("--seed", type=int, help="model/initialization seed")
    common.add_argument("--preset", choices=("desk", "paper"), default="desk")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="eamat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write synthetic train/val/test files").set_defaults(fn=cmd_generate)
    sub.add_parser("train", parents=[common], help="train and checkpoint a model").set_defaults(fn=cmd_train)
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset file (default: the checkpoint's test split)")
    p.add_argument("--dists", action="store_true", help="include boundary distributions in predictions.txt")
    p.set_defaults(fn=cmd_eval)
    sub.add_parser("ablate", parents=[common], help="train and compare the motion-block variants").set_defaults(fn=cmd_ablate)
    p = sub.add_parser("sweep", parents=[common], help="sweep scale count or loss weights")
    p.add_argument("--param", choices=(*SWEEPS, "loss_grid"), default="scales")
    p.add_argument("--values", help="comma-separated values overriding the default grid")
    p.set_defaults(fn=cmd_sweep)
    p = sub.add_parser("gradcheck", parents=[common], help="run the finite-difference suite")
    p.add_argument("--case", action="append", help="run only this case (repeatable)")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (ConfigError, InputError, NonFiniteError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
