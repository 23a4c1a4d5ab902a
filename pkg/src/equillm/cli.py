"""Command-line entry point: ``equillm {gen-data,train,eval,predict,ablate}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import geomgraph as gg
from . import runner
from .config import RunConfig, variant_config
from .errors import ConfigError, DataError, EquiLLMError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "prompt_template", None):
        changes["prompt_template"] = args.prompt_template
    if getattr(args, "dataset", None):
        changes["dataset"] = args.dataset
    if changes:
        cfg = cfg.with_(**changes)
    if getattr(args, "variant", None):
        cfg = variant_config(cfg, args.variant)
    return cfg


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="equillm", description="Equivariant graph model with a frozen sequence model.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", metavar="PATH", help="JSON run configuration")
        sp.add_argument("--seed", type=_seed, help="override the configured seed")
        sp.add_argument("--out", metavar="DIR", help=out_help)

    sp = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(sp, "output directory (dataset.traj.jsonl or dataset.res.jsonl is written there)")

    sp = sub.add_parser("train", help="train one configuration")
    common(sp, "output directory for checkpoint.npz and report.json")
    sp.add_argument("--prompt-template", metavar="PATH", help="prompt template file")
    sp.add_argument("--variant", metavar="NAME", help="ablation slug or architecture variant")
    sp.add_argument("--dataset", metavar="PATH", help="dataset file (generated from the config if omitted)")

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp, "output directory for the evaluation report")
    sp.add_argument("--checkpoint", metavar="PATH", required=True)
    sp.add_argument("--dataset", metavar="PATH")
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))

    sp = sub.add_parser("predict", help="predict from a checkpoint")
    common(sp, "output directory (predictions.jsonl is written there)")
    sp.add_argument("--checkpoint", metavar="PATH", required=True)
    sp.add_argument("--input", metavar="PATH", required=True, help="dataset file with inputs")

    sp = sub.add_parser("ablate", help="run the seven-row ablation matrix")
    common(sp, "output directory for per-row runs and the combined table")
    sp.add_argument("--prompt-template", metavar="PATH", help="prompt template file")
    sp.add_argument("--dataset", metavar="PATH")
    return p


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run(args) -> int:
    if args.command == "gen-data":
        cfg = _config(args)
        out = _out_dir(args, ".")
        data = runner.generate_dataset(cfg)
        path = out / ("dataset.traj.jsonl" if cfg.task == "dynamics" else "dataset.res.jsonl")
        gg.save_dataset(path, data)
        print(path)
    elif args.command == "train":
        cfg = _config(args)
        out = _out_dir(args, "run")
        res = runner.train_run(cfg, out_dir=out)
        losses = res.report["train_loss"]
        print(f"train loss {losses[0]:.6g} -> {losses[-1]:.6g} in {res.report['steps']} steps; wrote {out}")
    elif args.command == "eval":
        if args.config:
            cfg = _config(args)
        else:
            _, cfg = runner.load_model(args.checkpoint)
            if args.seed is not None:
                cfg = cfg.with_(seed=args.seed)
            if args.dataset:
                cfg = cfg.with_(dataset=args.dataset)
        report = runner.evaluate(args.checkpoint, cfg, split=args.split)
        text = json.dumps(report, indent=2, sort_keys=True)
        if args.out:
            (_out_dir(args, ".") / "eval.json").write_text(text + "\n")
        print(text)
    elif args.command == "predict":
        cfg = RunConfig.load(args.config) if args.config else None
        out = _out_dir(args, ".")
        inputs = gg.load_dataset(args.input)
        runner.predict(args.checkpoint, inputs, out / "predictions.jsonl", cfg)
        print(out / "predictions.jsonl")
    elif args.command == "ablate":
        cfg = _config(args)
        out = _out_dir(args, "ablation")
        results = runner.ablate(cfg, out)
        print((out / "ablation.md").read_text(), end="")
        if not all(r["ok"] for r in results):
            return EXIT_NUMERIC if any("Numerical" in r.get("error", "") or "Training" in r.get("error", "")
                                       for r in results) else EXIT_DATA
    return EXIT_OK


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, EquiLLMError)):
        return EXIT_DATA
    return 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except EquiLLMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
