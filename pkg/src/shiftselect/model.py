"""Two-tower retrieval model: causal text encoder vs. shift + selection video encoder."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .matching import LossState, similarity_matrix, symmetric_ce_loss
from .numerics import Tensor, keyed_rng
from .tokenselect import (
    ALL_TOKENS,
    LEARNED,
    ImportanceScorer,
    PerturbConfig,
    SelectionTransformer,
    hard_topk,
    importance_scores,
    perturbed_topk,
    random_topk_batch,
    select_tokens,
)
from .tokenshift import VideoEncoder, encode_video
from .transformer import Module, TextBatch, TextEncoder, init_normal, ones_param, zeros_param

INIT_STREAM = 11
EVAL_RANDOM_SEED = 424242


class SelectionHead(SelectionTransformer):
    """Importance scorer, joint transformer and the frame-embedding projection."""

    def __init__(self, max_frames, channels, heads, mlp_ratio, layers, rng):
        super().__init__(max_frames, channels, heads, mlp_ratio, layers, rng)
        self.score = ImportanceScorer(channels, rng)
        self.ln_post_g, self.ln_post_b = ones_param(channels), zeros_param(channels)
        self.proj = init_normal(rng, channels, channels, std=channels**-0.5)


class RetrievalModel(Module):
    def __init__(self, cfg):
        m = cfg.model
        for name in ("vocab_size", "max_text_len", "n_patches", "patch_dim", "max_frames"):
            if getattr(m, name) <= 0:
                raise ValueError(f"model.{name} must be resolved before building the model")
        self.cfg = cfg
        self.plan = cfg.shift.plan()
        rng = keyed_rng(cfg.seed, INIT_STREAM)
        self.text = TextEncoder(m.vocab_size, m.max_text_len, m.channels, m.heads, m.mlp_ratio, m.text_layers, rng)
        self.video = VideoEncoder(m.n_patches, m.patch_dim, m.channels, m.heads, m.mlp_ratio, m.video_layers, rng)
        self.select = SelectionHead(m.max_frames, m.channels, m.heads, m.mlp_ratio, m.select_layers, rng)
        self.loss = LossState(cfg.loss.tau_init)

    def named_parameters(self, prefix: str = ""):
        yield from self.text.named_parameters(prefix + "text.")
        yield from self.video.named_parameters(prefix + "video.")
        yield from self.select.named_parameters(prefix + "select.")
        yield prefix + "loss.log_tau", self.loss.log_tau

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"parameter {name}: checkpoint shape {state[name].shape} != model shape {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    # -- towers -----------------------------------------------------------
    def encode_texts(self, batch: TextBatch) -> Tensor:
        return self.text(batch)

    def encode_videos(self, videos, training: bool = False, noise_seed: int = 0) -> Tensor:
        """(B, T, N, patch_dim) -> (B, T, C) frame-wise embeddings."""
        sel = self.cfg.select
        grid = encode_video(videos, self.video, self.plan)
        b, t, s, _ = grid.shape
        if sel.mode == LEARNED:
            scores = importance_scores(grid, self.select.score)
            k = min(sel.k, s)
            # rank view: column 0 holds the top-scoring token, smoothed or not
            if training and sel.epsilon > 0:
                cfg = PerturbConfig(sel.epsilon, sel.samples)
                indicator = perturbed_topk(scores, k, cfg, noise_seed, by_rank=True, hard_forward=sel.hard_forward)
            else:
                indicator = Tensor(hard_topk(scores.data, k, by_rank=True))
            selected = select_tokens(grid, indicator)
            pick = np.zeros((b, t), dtype=np.int64)
        elif sel.mode == ALL_TOKENS:
            selected, pick = grid, None
        else:
            seed = noise_seed if training else EVAL_RANDOM_SEED
            indicator = random_topk_batch((b, t), s - 1, min(sel.k, s), seed)
            selected, pick = select_tokens(grid, indicator), None
        frames = self.select(selected, pick)
        head = self.select
        return nx.layer_norm(frames, head.ln_post_g, head.ln_post_b) @ head.proj

    def similarity(self, queries: Tensor, videos: Tensor) -> Tensor:
        return similarity_matrix(queries, videos, self.cfg.loss.lam)

    def loss_fn(self, batch: TextBatch, videos, training: bool = True, noise_seed: int = 0) -> Tensor:
        q = self.encode_texts(batch)
        v = self.encode_videos(videos, training=training, noise_seed=noise_seed)
        return symmetric_ce_loss(self.similarity(q, v), self.loss)
