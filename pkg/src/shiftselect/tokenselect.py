"""Importance scoring, top-K token selection and the joint selection transformer.

Indicator matrices have shape (..., N+1, K): one column per selected token,
columns ordered by ascending token index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor, keyed_normal, keyed_rng
from .transformer import Block, Module, init_normal, ones_param, zeros_param

LEARNED = "learned"
RANDOM = "random"
ALL_TOKENS = "all_tokens"
SELECTION_MODES = (LEARNED, RANDOM, ALL_TOKENS)
NOISE_STREAM = 31
SCORE_INIT_GAIN = 4.0


@dataclass(frozen=True)
class PerturbConfig:
    epsilon: float = 0.05
    samples: int = 500

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.samples < 1:
            raise ValueError(f"perturbed top-k needs at least one sample, got {self.samples}")


class ImportanceScorer(Module):
    """Reduce tokens to C/2, pair each with the reduced [CLS], score, softmax."""

    def __init__(self, channels: int, rng: np.random.Generator):
        if channels % 2:
            raise ValueError(f"importance scoring halves the channels; C={channels} is odd")
        half = channels // 2
        self.ln_g, self.ln_b = ones_param(channels), zeros_param(channels)
        self.w_reduce, self.b_reduce = init_normal(rng, channels, half, std=channels**-0.5), zeros_param(half)
        self.w_hidden, self.b_hidden = init_normal(rng, channels, half, std=channels**-0.5), zeros_param(half)
        self.w_score, self.b_score = init_normal(rng, half, 1, std=SCORE_INIT_GAIN * half**-0.5), zeros_param(1)

    def logits(self, tokens) -> Tensor:
        tokens = nx.as_tensor(tokens)
        if tokens.shape[-1] != self.ln_g.shape[0]:
            raise ValueError(f"expected {self.ln_g.shape[0]} channels, got {tokens.shape[-1]}")
        h = nx.layer_norm(tokens, self.ln_g, self.ln_b)
        reduced = nx.gelu(h @ self.w_reduce + self.b_reduce)
        cls = reduced[..., :1, :]
        paired = nx.concatenate([np.zeros(reduced.shape) + cls, reduced], axis=-1)
        hidden = nx.gelu(paired @ self.w_hidden + self.b_hidden)
        out = hidden @ self.w_score + self.b_score
        return out.reshape(out.shape[:-1])

    def __call__(self, tokens) -> Tensor:
        return importance_scores(tokens, self)


def importance_scores(tokens, params: ImportanceScorer) -> Tensor:
    """(..., N+1, C) tokens -> (..., N+1) scores summing to one."""
    return nx.softmax(params.logits(tokens), axis=-1)


def _scores_array(scores) -> np.ndarray:
    return scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)


def topk_indices(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores per row, ties to the lower index, ascending."""
    return np.sort(topk_by_rank(scores, k), axis=-1)


def topk_by_rank(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores per row in descending-score order (rank view)."""
    s = _scores_array(scores)
    n = s.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"K={k} outside [1, {n}]")
    return np.argsort(-s, axis=-1, kind="stable")[..., :k]


def indicator_from_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """(..., K) token indices -> (..., n, K) one-hot columns."""
    return (np.arange(n)[:, None] == idx[..., None, :]).astype(np.float64)


def hard_topk(scores, k: int, by_rank: bool = False) -> np.ndarray:
    """One-hot (..., N+1, K) indicator; columns ascending by index, or by score with ``by_rank``."""
    pick = topk_by_rank if by_rank else topk_indices
    return indicator_from_indices(pick(scores, k), _scores_array(scores).shape[-1])


def rank1_column(scores, k: int) -> np.ndarray:
    """Column of the indicator holding the highest-scoring token."""
    s = _scores_array(scores)
    idx = topk_indices(s, k)
    best = np.argmax(s, axis=-1)
    return np.argmax(idx == best[..., None], axis=-1)


def perturbation_noise(shape, samples: int, seed: int) -> np.ndarray:
    """(samples, *shape) Gaussian draws from the stream keyed by ``seed``.

    Draw ``i`` is the i-th block of that stream, so it depends only on (seed, i, shape).
    """
    return keyed_normal((samples,) + tuple(shape), seed, NOISE_STREAM)


def perturbed_topk(
    scores, k: int, cfg: PerturbConfig, seed: int, by_rank: bool = False, hard_forward: bool = False
) -> Tensor:
    """Monte-Carlo smoothed top-K indicator with its perturbation Jacobian.

    Forward is the mean of hard indicators of ``S + eps Z``; backward contracts
    the output gradient with the same draws: mean_z <hard(S + eps z), G> z / eps.
    ``hard_forward`` keeps that backward but returns the unperturbed hard
    indicator, so training sees exactly the tokens evaluation will pick.
    """
    scores = nx.as_tensor(scores)
    s = scores.data
    n = s.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"K={k} outside [1, {n}]")
    if cfg.epsilon == 0:
        return Tensor(hard_topk(s, k, by_rank))

    m = cfg.samples
    noise = perturbation_noise(s.shape, m, seed)
    idx = (topk_by_rank if by_rank else topk_indices)(s[None] + cfg.epsilon * noise, k)  # (m, ..., K)
    rows = int(np.prod(s.shape[:-1], dtype=np.int64))
    flat = idx.reshape(m, rows, k)
    if hard_forward:
        out = hard_topk(s, k, by_rank)
    else:
        cell = (np.arange(rows)[None, :, None] * n + flat) * k + np.arange(k)
        counts = np.bincount(cell.reshape(-1), minlength=rows * n * k)
        out = (counts / m).reshape(s.shape + (k,))

    def backward(g):
        gt = np.swapaxes(g, -1, -2).reshape(rows, k, n)
        picked = np.take_along_axis(gt[None], flat[..., None], axis=-1)[..., 0]  # (m, rows, K)
        weight = picked.sum(axis=-1).reshape((m,) + s.shape[:-1] + (1,))
        return ((weight * noise).mean(axis=0) / cfg.epsilon,)

    return nx.make_op(out, (scores,), backward)


def random_topk(n_spatial: int, k: int, seed: int) -> np.ndarray:
    """Uniformly random distinct tokens out of N+1, as an (N+1) x K indicator."""
    total = n_spatial + 1
    if not 1 <= k <= total:
        raise ValueError(f"K={k} outside [1, {total}]")
    idx = np.sort(keyed_rng(seed).choice(total, size=k, replace=False))
    return indicator_from_indices(idx, total)


def random_topk_batch(lead_shape, n_spatial: int, k: int, seed: int) -> np.ndarray:
    """Independent random selections for every frame in ``lead_shape``."""
    total = n_spatial + 1
    if not 1 <= k <= total:
        raise ValueError(f"K={k} outside [1, {total}]")
    keys = keyed_rng(seed).random(tuple(lead_shape) + (total,))
    idx = np.sort(np.argsort(keys, axis=-1)[..., :k], axis=-1)
    return indicator_from_indices(idx, total)


def select_tokens(tokens, indicator) -> Tensor:
    """M^T I: (..., N+1, C) tokens, (..., N+1, K) indicator -> (..., K, C)."""
    tokens, indicator = nx.as_tensor(tokens), nx.as_tensor(indicator)
    if indicator.shape[-2] != tokens.shape[-2]:
        raise ValueError(f"indicator rows {indicator.shape[-2]} != token count {tokens.shape[-2]}")
    return nx.swapaxes(indicator, -1, -2) @ tokens


class SelectionTransformer(Module):
    """Joint spatio-temporal attention over the selected tokens of every frame."""

    def __init__(self, max_frames, channels, heads, mlp_ratio, layers, rng):
        self.temporal_embed = init_normal(rng, max_frames, channels, std=0.01)
        self.block = [Block(channels, heads, mlp_ratio, rng) for _ in range(layers)]

    def __call__(self, selected, pick=None) -> Tensor:
        return selection_transformer(selected, self, pick)


def selection_transformer(selected, params: SelectionTransformer, pick=None) -> Tensor:
    """(B, T, K, C) selected tokens -> (B, T, C) frame-wise embeddings.

    ``pick`` (B, T) gives each frame's output column (its rank-1 token);
    ``None`` mean-pools the frame's K outputs instead.
    """
    x = nx.as_tensor(selected)
    if x.ndim != 4:
        raise ValueError(f"expected (B, T, K, C) selected tokens, got {x.shape}")
    b, t, k, c = x.shape
    if t > params.temporal_embed.shape[0]:
        raise ValueError(f"{t} frames exceed the {params.temporal_embed.shape[0]} temporal embeddings")
    x = (x + params.temporal_embed[:t].reshape(t, 1, c)).reshape(b, t * k, c)
    for blk in params.block:
        x = blk(x)
    x = x.reshape(b, t, k, c)
    if pick is None:
        return x.mean(axis=2)
    pick = np.asarray(pick, dtype=np.int64)
    return x[np.arange(b)[:, None], np.arange(t)[None, :], pick]
