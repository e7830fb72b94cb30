"""Frame-wise text-video matching and the symmetric contrastive objective."""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .numerics import Tensor

DEFAULT_LAMBDA = 4.0
NORM_FLOOR = 1e-12
TAU_INIT = 1.0 / 0.07
TAU_MIN, TAU_MAX = 1.0, 100.0


def frame_similarities(q, frames) -> Tensor:
    """Cosine similarity of query ``q`` (C,) with each frame of ``frames`` (T, C)."""
    q, frames = nx.as_tensor(q), nx.as_tensor(frames)
    return nx.cosine_similarity(q, frames, axis=-1, eps=NORM_FLOOR)


def aggregate_similarity(sims, lam: float = DEFAULT_LAMBDA) -> Tensor:
    """Softmax(lambda * s)-weighted mean of frame similarities along the last axis."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    sims = nx.as_tensor(sims)
    if lam == 0:
        # same value and gradient as uniform weights, without the rounding
        return sims.mean(axis=-1)
    weights = nx.softmax(sims * lam, axis=-1)
    return (weights * sims).sum(axis=-1)


def similarity_matrix(queries, videos, lam: float = DEFAULT_LAMBDA) -> Tensor:
    """(B_t, C) queries x (B_v, T, C) frame embeddings -> (B_t, B_v) scores."""
    queries, videos = nx.as_tensor(queries), nx.as_tensor(videos)
    if queries.ndim != 2 or videos.ndim != 3 or queries.shape[-1] != videos.shape[-1]:
        raise ValueError(f"incompatible shapes {queries.shape} and {videos.shape}")
    bv, t, c = videos.shape
    qn = nx.l2_normalize(queries, axis=-1, eps=NORM_FLOOR)
    vn = nx.l2_normalize(videos, axis=-1, eps=NORM_FLOOR)
    sims = (qn @ nx.transpose(vn.reshape(bv * t, c))).reshape(queries.shape[0], bv, t)
    return aggregate_similarity(sims, lam)


class LossState:
    """Trainable logit scale kept in log space; exp is clamped to [1, 100]."""

    def __init__(self, tau: float = TAU_INIT):
        self.log_tau = Tensor(np.array([math.log(tau)]), requires_grad=True)

    @property
    def tau(self) -> Tensor:
        return nx.exp(nx.clip(self.log_tau, math.log(TAU_MIN), math.log(TAU_MAX)))


def symmetric_ce_loss(sim, tau) -> Tensor:
    """Mean of text->video (row) and video->text (column) cross-entropies.

    ``tau`` is a LossState, a scalar Tensor, or a plain number.
    """
    sim = nx.as_tensor(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"symmetric loss needs a square matrix, got {sim.shape}")
    scale = tau.tau if isinstance(tau, LossState) else nx.as_tensor(tau)
    logits = sim * scale.reshape(())
    diag = np.arange(sim.shape[0])
    t2v = nx.log_softmax(logits, axis=1)[diag, diag].mean()
    v2t = nx.log_softmax(logits, axis=0)[diag, diag].mean()
    return (t2v + v2t) * -0.5


def inverted_softmax(sim, beta: float = 20.0) -> np.ndarray:
    """Discount each score by how strongly its candidate attracts the other queries.

    out[i, j] = sim[i, j] * softmax_i(beta * sim[:, j]); inference only.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    s = np.asarray(sim.data if isinstance(sim, Tensor) else sim, dtype=np.float64)
    z = beta * s
    z = z - z.max(axis=0, keepdims=True)
    w = np.exp(z)
    return s * (w / w.sum(axis=0, keepdims=True))
