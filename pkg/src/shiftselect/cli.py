"""Command line entry point: ``shiftselect {train,eval,ablate,gen-data,selftest}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import tomli

from .numerics import ContainerError, NumericGuardError
from .synthdata import CorpusError, CorpusSpec, generate_corpus, save_corpus

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INCOMPATIBLE = 4

log = logging.getLogger("shiftselect")


class UsageError(Exception):
    """Bad arguments; reported with exit code 2."""


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shiftselect", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model from a TOML config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (default: config out_dir)")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--inverted-softmax", action="store_true")
    e.add_argument("--beta", type=float)
    e.add_argument("--sim-out", help="also write the similarity matrix here")

    a = sub.add_parser("ablate", help="train/evaluate every cell of a grid")
    a.add_argument("--config", required=True)
    a.add_argument("--grid", required=True)
    a.add_argument("--out", help="where to write ablation.md/.json (default: <out_dir>/ablation)")

    g = sub.add_parser("gen-data", help="generate synthetic corpora from a TOML spec")
    g.add_argument("--spec", required=True)
    g.add_argument("--out", required=True)

    s = sub.add_parser("selftest", help="run gradient and oracle suites")
    s.add_argument("--seeds", type=int, default=100)
    return p


def _read_toml(path) -> dict:
    try:
        return tomli.loads(Path(path).read_text())
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def cmd_train(args) -> int:
    from .harness.config import RunConfig
    from .harness.train import evaluate_model, train

    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.override("seed", args.seed)
    result = train(cfg, out_dir=args.out)
    summary = {"checkpoint": str(result.checkpoint), "log": str(result.log_path), "steps": len(result.losses)}
    if result.losses:
        summary["final_loss"] = result.losses[-1]
    test = Path(cfg.data.test)
    if test.with_name(test.name + ".manifest.json").exists():
        from .synthdata import load_corpus

        t2v, v2t = evaluate_model(result.model, load_corpus(test))
        summary["test"] = {"t2v": t2v.to_dict(), "v2t": v2t.to_dict()}
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness.train import evaluate

    if args.beta is not None and args.beta <= 0:
        raise UsageError("--beta must be positive")
    inverted = True if args.inverted_softmax else None
    t2v, v2t = evaluate(args.checkpoint, args.data, inverted, args.beta, sim_out=args.sim_out)
    print(json.dumps({"t2v": t2v.to_dict(), "v2t": v2t.to_dict()}, indent=1))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .harness.ablate import Grid, markdown_table, run_ablation, write_tables
    from .harness.config import RunConfig

    base = RunConfig.load(args.config).validate()
    grid = Grid.load(args.grid)
    results = run_ablation(base, grid)
    out = args.out or str(Path(base.out_dir) / "ablation")
    write_tables(results, out)
    print(markdown_table(results), end="")
    return EXIT_OK


def corpus_splits(raw: dict) -> dict[str, CorpusSpec]:
    """``[corpus]`` holds shared fields; each ``[splits.NAME]`` overrides them."""
    unknown = set(raw) - {"corpus", "splits"}
    if unknown:
        raise UsageError(f"unknown sections in data spec: {sorted(unknown)}")
    shared = raw.get("corpus", {})
    splits = raw.get("splits") or {"": {}}
    try:
        return {name: CorpusSpec(**{**shared, **over}) for name, over in splits.items()}
    except TypeError as exc:
        raise UsageError(f"bad data spec: {exc}") from None


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    written = {}
    for name, spec in corpus_splits(_read_toml(args.spec)).items():
        path = out / name if name else out
        save_corpus(generate_corpus(spec), path)
        written[name or "corpus"] = {"path": str(path), "n_samples": spec.n_samples}
    print(json.dumps(written, indent=1))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selfcheck import run_all

    if args.seeds < 1:
        raise UsageError("--seeds must be positive")
    results = run_all(args.seeds)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gen-data": cmd_gen_data,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    from .harness.config import ConfigError
    from .harness.train import IncompatibleCheckpoint, NumericFailure

    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, CorpusError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, NumericGuardError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IncompatibleCheckpoint, ContainerError) as exc:
        print(f"incompatible: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE


if __name__ == "__main__":
    sys.exit(main())
