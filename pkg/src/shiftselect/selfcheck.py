"""Gradient and oracle suites shared by ``shiftselect selftest`` and the test-suite.

Each ``*_cases(seed)`` returns ``{name: (fn, inputs)}`` ready for ``grad_check``.
Perturbed top-K is absent on purpose: with frozen noise its forward pass is
piecewise constant, so finite differences cannot see the Monte-Carlo Jacobian.
Its gradient is checked statistically in the test-suite instead.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .matching import LossState, aggregate_similarity, similarity_matrix, symmetric_ce_loss
from .metrics import truth_ranks
from .numerics import Tensor, grad_check
from .tokenselect import (
    ImportanceScorer,
    SelectionTransformer,
    hard_topk,
    importance_scores,
    select_tokens,
    selection_transformer,
)
from .tokenshift import CHANNEL_SHIFT, TOKEN_SHIFT, ShiftPlan, channel_shift_variant, shift_block, token_shift
from .transformer import Block, attention_block

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4


def _shape(rng, rank):
    return tuple(int(d) for d in rng.integers(1, 4, size=rank))


def _weights(shape, seed):
    return np.random.default_rng(seed + 10_007).normal(size=shape)


def _away_from(x, points, margin=1e-3):
    for p in points:
        x = np.where(np.abs(x - p) < margin, p + 2 * margin, x)
    return x


def primitive_cases(seed: int) -> dict:
    """One randomized instance per primitive, shapes drawn per seed."""
    rng = np.random.default_rng(seed)
    rank = int(rng.integers(1, 5))
    s = _shape(rng, rank)
    w = rng.normal(size=s)
    W = Tensor(w)
    ax = int(rng.integers(0, rank))
    cases = {
        "add": (lambda a, b: ((a + b) * W).sum(), [rng.normal(size=s), rng.normal(size=s[1:] or (1,))]),
        "sub": (lambda a, b: ((a - b) * W).sum(), [rng.normal(size=s), rng.normal(size=s)]),
        "mul": (lambda a, b: ((a * b) * W).sum(), [rng.normal(size=s), rng.normal(size=s)]),
        "div": (lambda a, b: ((a / b) * W).sum(), [rng.normal(size=s), rng.uniform(0.5, 2.0, size=s)]),
        "exp": (lambda a: (nx.exp(a) * W).sum(), [rng.normal(size=s)]),
        "log": (lambda a: (nx.log(a) * W).sum(), [rng.uniform(0.5, 2.0, size=s)]),
        "gelu": (lambda a: (nx.gelu(a) * W).sum(), [rng.normal(size=s) * 2]),
        "softmax": (lambda a: (nx.softmax(a, axis=ax) * W).sum(), [rng.normal(size=s)]),
        "log_softmax": (lambda a: (nx.log_softmax(a, axis=ax) * W).sum(), [rng.normal(size=s)]),
        # >= 3 features: over two, the output is +-1 whatever the input and FD only sees roundoff
        "layer_norm": (
            lambda a, g, b: (nx.layer_norm(a, g, b) * Tensor(_weights(s[:-1] + (s[-1] + 2,), seed))).sum(),
            [rng.normal(size=s[:-1] + (s[-1] + 2,)), rng.normal(size=s[-1] + 2), rng.normal(size=s[-1] + 2)],
        ),
        "transpose": (lambda a: (nx.transpose(a, tuple(reversed(range(rank)))) * Tensor(w.T)).sum(), [rng.normal(size=s)]),
        "reshape": (lambda a: (a.reshape(-1) * Tensor(w.reshape(-1))).sum(), [rng.normal(size=s)]),
        "concatenate": (
            lambda a, b: (nx.concatenate([a, b], axis=ax) * Tensor(np.concatenate([w, w], axis=ax))).sum(),
            [rng.normal(size=s), rng.normal(size=s)],
        ),
        "mean": (lambda a: (a.mean(axis=ax) * Tensor(w.mean(axis=ax))).sum(), [rng.normal(size=s)]),
        "sum": (lambda a: (a.sum(axis=ax) * Tensor(w.sum(axis=ax))).sum(), [rng.normal(size=s)]),
        "getitem": (lambda a: (a[..., :1] * Tensor(w[..., :1])).sum(), [rng.normal(size=s)]),
        "cosine_similarity": (
            lambda a, b: (nx.cosine_similarity(a, b, axis=-1) * Tensor(w.sum(axis=-1))).sum(),
            [rng.normal(size=s), rng.normal(size=s)],
        ),
        "clip": (lambda a: (nx.clip(a, -0.5, 0.5) * W).sum(), [_away_from(rng.normal(size=s), (-0.5, 0.5))]),
    }
    if rank >= 2:
        inner = int(rng.integers(1, 4))
        wm = Tensor(_weights(s[:-1] + (inner,), seed))
        cases["matmul"] = (lambda a, b: ((a @ b) * wm).sum(), [rng.normal(size=s), rng.normal(size=(s[-1], inner))])
        cases["matmul_batched"] = (
            lambda a, b: ((a @ b) * wm).sum(),
            [rng.normal(size=s), rng.normal(size=s[:-2] + (s[-1], inner))],
        )
        rows = np.array([0, 0, s[0] - 1])
        wf = Tensor(_weights((3,) + s[1:], seed))
        cases["getitem_fancy"] = (lambda a: (a[rows] * wf).sum(), [rng.normal(size=s)])
    return cases


def _bind(module, names):
    """Write tensors into a module's named parameter slots (``blockN`` -> ``block[N-1]``)."""

    def put(values):
        for dotted, value in zip(names, values):
            *path, leaf = dotted.split(".")
            node = module
            for part in path:
                if part.startswith("block") and part[5:].isdigit():
                    node = node.block[int(part[5:]) - 1]
                else:
                    node = getattr(node, part)
            setattr(node, leaf, value)

    return put


def _model_case(seed: int):
    # deferred: the model pulls in the harness config
    from .harness.config import RunConfig
    from .model import RetrievalModel
    from .transformer import TextBatch

    rng = np.random.default_rng(seed)
    cfg = RunConfig.from_dict(
        {
            "seed": seed,
            "model": {
                "channels": 8, "heads": 2, "mlp_ratio": 2.0, "text_layers": 1, "video_layers": 2,
                "select_layers": 1, "vocab_size": 6, "max_text_len": 3, "n_patches": 4, "patch_dim": 3, "max_frames": 3,
            },
            "shift": {"mode": TOKEN_SHIFT, "layers": [1, 2], "ratio": 0.5},
            "select": {"k": 2},
        }
    )
    model = RetrievalModel(cfg)
    batch = TextBatch.from_sequences([[1, 2, 5], [3, 5], [4, 1, 5]], pad_id=0)
    videos = rng.normal(size=(3, 3, 4, 3))
    names = ["text.token_embed", "video.block1.w_qkv", "video.block2.w_fc", "select.score.w_score", "select.proj", "loss.log_tau"]
    params = dict(model.named_parameters())
    put = _bind(model, names)

    def loss(*values):
        put(values)
        return model.loss_fn(batch, videos, training=False)

    return loss, [params[n].data.copy() for n in names]


def composite_cases(seed: int) -> dict:
    """Model-level operations and the end-to-end loss with hard selection."""
    rng = np.random.default_rng(seed)
    c, heads, t, n = 6, 2, int(rng.integers(2, 4)), int(rng.integers(2, 5))
    blk = Block(c, heads, 2.0, rng)
    grid = rng.normal(size=(t, n + 1, c))
    wg = Tensor(rng.normal(size=grid.shape))
    plan = ShiftPlan(TOKEN_SHIFT, (1,), float(rng.choice([0.25, 0.5, 1.0])))
    cplan = ShiftPlan(CHANNEL_SHIFT, (1,), 0.5)
    scorer = ImportanceScorer(c, rng)
    k = int(rng.integers(1, n + 2))
    indicator = hard_topk(rng.normal(size=(t, n + 1)), k, by_rank=True)
    sel_params = SelectionTransformer(t, c, heads, 2.0, 1, rng)
    selected = rng.normal(size=(2, t, k, c))
    ws = Tensor(rng.normal(size=(2, t, c)))
    q, v = rng.normal(size=(3, c)), rng.normal(size=(3, t, c))
    state = LossState(float(rng.uniform(2.0, 20.0)))
    put_blk = _bind(blk, ["w_qkv", "w_proj"])
    put_sel = _bind(sel_params, ["block1.w_proj"])

    def block_case(x, w_qkv, w_proj):
        put_blk((w_qkv, w_proj))
        return (attention_block(x, blk) * wg).sum()

    def shift_case(x):
        return (shift_block(x, blk, plan, 1) * wg).sum()

    def selection_case(x, w_proj):
        put_sel((w_proj,))
        return (selection_transformer(x, sel_params, np.zeros((2, t), dtype=np.int64)) * ws).sum()

    def loss_case(a, b, log_tau):
        state.log_tau = log_tau
        return symmetric_ce_loss(similarity_matrix(a, b, 4.0), state)

    return {
        "attention_block": (block_case, [grid, blk.w_qkv.data.copy(), blk.w_proj.data.copy()]),
        "token_shift": (lambda x: (token_shift(x, plan) * wg).sum(), [grid]),
        "channel_shift": (lambda x: (channel_shift_variant(x, cplan) * wg).sum(), [grid]),
        "shift_block": (shift_case, [grid]),
        "importance_scores": (lambda x: (importance_scores(x, scorer) * Tensor(_weights((t, n + 1), seed))).sum(), [grid]),
        "select_tokens": (lambda x: (select_tokens(x, indicator) * Tensor(_weights((t, k, c), seed))).sum(), [grid]),
        "selection_transformer": (selection_case, [selected, sel_params.block[0].w_proj.data.copy()]),
        "aggregate_similarity": (lambda s: aggregate_similarity(s, 4.0), [rng.uniform(-1, 1, size=t + 1)]),
        "matching_loss": (loss_case, [q, v, state.log_tau.data.copy()]),
        "end_to_end": _model_case(seed),
    }


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def gradient_suite(seeds=range(100), entries: int = 12) -> SuiteResult:
    started = time.perf_counter()
    worst = {"primitive": 0.0, "composite": 0.0}
    failures = []
    for seed in seeds:
        for kind, cases, tol in (
            ("primitive", primitive_cases(seed), PRIMITIVE_TOL),
            ("composite", composite_cases(seed), COMPOSITE_TOL),
        ):
            for name, (fn, inputs) in cases.items():
                report = grad_check(fn, inputs, tol=tol, op_name=name, entries=entries, seed=seed)
                worst[kind] = max(worst[kind], report.max_rel_error)
                if not report.passed:
                    failures.append(f"{name}@{seed}")
    detail = f"worst primitive {worst['primitive']:.1e}, composite {worst['composite']:.1e}"
    if failures:
        detail += f"; failed {failures[:5]}"
    return SuiteResult("gradients", not failures, detail, time.perf_counter() - started)


def _best_subset(scores, k):
    return max(itertools.combinations(range(len(scores)), k), key=lambda c: (sum(scores[i] for i in c), [-i for i in c]))


def topk_oracle_suite(trials: int = 1000, seed: int = 0) -> SuiteResult:
    """hard_topk against exhaustive subset search; scores are continuous so ties have measure zero."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        n1 = int(rng.integers(1, 11))
        k = int(rng.integers(1, min(4, n1) + 1))
        s = rng.normal(size=n1)
        chosen = np.flatnonzero(hard_topk(s, k).sum(axis=1)).tolist()
        bad += chosen != sorted(_best_subset(s, k))
    return SuiteResult("topk_oracle", bad == 0, f"{trials - bad}/{trials} exact", time.perf_counter() - started)


def shift_oracle_suite() -> SuiteResult:
    """Every shifted row is a copy of one input row or zero, exhaustively for small grids."""
    started = time.perf_counter()
    rng = np.random.default_rng(0)
    bad = checked = 0
    for t, n, ratio in itertools.product(range(1, 6), range(1, 9), (0.0, 0.25, 0.5, 1.0)):
        g = rng.normal(size=(t, n + 1, 3))
        rows = {r.tobytes() for r in g.reshape(-1, 3)}
        out = token_shift(g, ShiftPlan(TOKEN_SHIFT, (), ratio)).data
        for r in out.reshape(-1, 3):
            checked += 1
            bad += not (r.tobytes() in rows or not r.any())
    return SuiteResult("shift_accounting", bad == 0, f"{checked - bad}/{checked} rows", time.perf_counter() - started)


def metrics_oracle_suite(trials: int = 1000, seed: int = 1) -> SuiteResult:
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        bt, bv = rng.integers(1, 65, size=2)
        sim = rng.integers(0, 5, size=(bt, bv)) / 4.0
        pairing = rng.integers(0, bv, size=bt)
        expected = [sorted(range(bv), key=lambda j: (-row[j], j)).index(p) + 1 for row, p in zip(sim, pairing)]
        bad += truth_ranks(sim, pairing).tolist() != expected
    return SuiteResult("metrics_oracle", bad == 0, f"{trials - bad}/{trials} exact", time.perf_counter() - started)


def run_all(seeds: int = 100) -> list[SuiteResult]:
    return [gradient_suite(range(seeds)), topk_oracle_suite(), shift_oracle_suite(), metrics_oracle_suite()]
