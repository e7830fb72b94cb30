"""Ablation grids: train and evaluate every cell over a shared seed set."""

from __future__ import annotations

import itertools
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from ..synthdata import Corpus, load_corpus
from .config import ConfigError, RunConfig
from .train import evaluate_model, total_rsum, train

log = logging.getLogger(__name__)

# grid axis -> dotted config key
AXES = {
    "ratio": "shift.ratio",
    "layers": "shift.layers",
    "mode": "shift.mode",
    "K": "select.k",
    "selection": "select.mode",
}
DEFAULT_SEEDS = (0, 1, 2)
METRICS = ("r1", "r5", "rsum")


@dataclass
class Grid:
    axes: dict[str, list]
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    workers: int = 1

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("ablation grid is empty")
        for name, values in self.axes.items():
            if name not in AXES:
                raise ConfigError(f"unknown grid axis {name!r}; choose from {sorted(AXES)}")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid axis {name!r} needs a non-empty list of values")
        if not self.seeds:
            raise ConfigError("ablation needs at least one seed")

    def cells(self) -> list[dict]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*self.axes.values())]

    @classmethod
    def from_dict(cls, raw: dict) -> "Grid":
        raw = dict(raw)
        seeds = tuple(raw.pop("seeds", DEFAULT_SEEDS))
        workers = int(raw.pop("workers", 1))
        return cls(raw, seeds, workers)

    @classmethod
    def load(cls, path) -> "Grid":
        try:
            raw = tomli.loads(Path(path).read_text())
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read grid {path}: {exc}") from None
        return cls.from_dict(raw)


def cell_config(base: RunConfig, cell: dict, seed: int) -> RunConfig:
    cfg = base.override("seed", seed)
    for axis, value in cell.items():
        cfg = cfg.override(AXES[axis], value)
    return cfg.validate()


@dataclass
class CellResult:
    cell: dict
    runs: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        out = {}
        for key in METRICS:
            values = [r[key] for r in self.runs]
            std = statistics.stdev(values) if len(values) > 1 else 0.0
            out[key] = {"mean": statistics.fmean(values), "std": std}
        return out


def run_one(cfg: RunConfig, train_corpus: Corpus, test_corpus: Corpus) -> dict:
    result = train(cfg, train_corpus, write=False)
    t2v, v2t = evaluate_model(result.model, test_corpus)
    return {
        "seed": cfg.seed,
        "r1": t2v.r_at[1],
        "r5": t2v.r_at[5],
        "rsum": total_rsum(t2v, v2t),
        "t2v": t2v.to_dict(),
        "v2t": v2t.to_dict(),
        "final_loss": result.losses[-1] if result.losses else None,
    }


def _job(args):
    cfg_text, train_corpus, test_corpus = args
    return run_one(RunConfig.loads(cfg_text), train_corpus, test_corpus)


def run_ablation(base: RunConfig, grid: Grid, train_corpus: Corpus | None = None, test_corpus: Corpus | None = None):
    """Every cell trains on the same seeds; the seed is the only thing varied within a cell."""
    train_corpus = train_corpus if train_corpus is not None else load_corpus(base.data.train)
    test_corpus = test_corpus if test_corpus is not None else load_corpus(base.data.test)
    cells = grid.cells()
    jobs = [(cell, cell_config(base, cell, seed)) for cell in cells for seed in grid.seeds]
    payload = [(cfg.dumps(), train_corpus, test_corpus) for _, cfg in jobs]
    if grid.workers > 1:
        with ProcessPoolExecutor(grid.workers) as pool:
            runs = list(pool.map(_job, payload))
    else:
        runs = []
        for (cell, cfg), args in zip(jobs, payload):
            log.info("cell %s seed %d", cell, cfg.seed)
            runs.append(_job(args))
    results = [CellResult(cell) for cell in cells]
    per_cell = len(grid.seeds)
    for i, run in enumerate(runs):
        results[i // per_cell].runs.append(run)
    return results


def _fmt_value(value) -> str:
    if isinstance(value, list):
        return "[" + ",".join(str(v) for v in value) + "]"
    return str(value)


def markdown_table(results: list[CellResult]) -> str:
    axes = list(results[0].cell)
    head = axes + ["R@1", "R@5", "rsum"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for res in results:
        s = res.summary()
        row = [_fmt_value(res.cell[a]) for a in axes]
        row += [f"{s[k]['mean']:.2f} ± {s[k]['std']:.2f}" for k in METRICS]
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def json_table(results: list[CellResult]) -> dict:
    return {"rows": [{"cell": r.cell, "summary": r.summary(), "runs": r.runs} for r in results]}


def write_tables(results: list[CellResult], out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    md, js = out / "ablation.md", out / "ablation.json"
    md.write_text(markdown_table(results))
    js.write_text(json.dumps(json_table(results), indent=1))
    return md, js
