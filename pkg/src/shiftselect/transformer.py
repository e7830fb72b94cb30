"""Pre-norm transformer blocks, the causal text encoder and frame embedding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import numerics as nx
from .numerics import Tensor

MASK_FILL = -1e9
INIT_STD = 0.02


class Module:
    """Minimal parameter container; walks attributes to collect trainable tensors."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield prefix + attr, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{attr}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val, 1):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def init_normal(rng: np.random.Generator, *shape, std: float = INIT_STD) -> Tensor:
    return _param(rng.normal(0.0, std, size=shape))


def zeros_param(*shape) -> Tensor:
    return _param(np.zeros(shape))


def ones_param(*shape) -> Tensor:
    return _param(np.ones(shape))


class Block(Module):
    """Weights of one pre-norm block: LN -> MHSA -> residual, LN -> MLP -> residual."""

    def __init__(self, channels: int, heads: int, mlp_ratio: float, rng: np.random.Generator):
        if channels <= 0 or heads <= 0 or channels % heads:
            raise ValueError(f"channels ({channels}) must be a positive multiple of heads ({heads})")
        if mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")
        hidden = int(round(mlp_ratio * channels))
        self.channels, self.heads = channels, heads
        self.ln1_g, self.ln1_b = ones_param(channels), zeros_param(channels)
        self.w_qkv, self.b_qkv = init_normal(rng, channels, 3 * channels), zeros_param(3 * channels)
        self.w_out, self.b_out = init_normal(rng, channels, channels), zeros_param(channels)
        self.ln2_g, self.ln2_b = ones_param(channels), zeros_param(channels)
        self.w_fc, self.b_fc = init_normal(rng, channels, hidden), zeros_param(hidden)
        self.w_proj, self.b_proj = init_normal(rng, hidden, channels), zeros_param(channels)

    def __call__(self, x, mask=None, causal=False, attn_input=None, on_attention=None):
        return attention_block(x, self, mask=mask, causal=causal, attn_input=attn_input, on_attention=on_attention)


def multi_head_attention(h: Tensor, params: Block, mask=None, causal=False, on_attention=None) -> Tensor:
    """Self-attention over the second-to-last axis of ``h`` (..., S, C)."""
    lead, (s, c) = h.shape[:-2], h.shape[-2:]
    nh = params.heads
    d = c // nh
    flat = h.reshape(-1, s, c)
    b = flat.shape[0]
    qkv = (flat @ params.w_qkv + params.b_qkv).reshape(b, s, 3, nh, d)
    qkv = nx.transpose(qkv, (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = (q @ nx.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d))

    bias = np.zeros((1, 1, s, s))
    key_valid = None
    if mask is not None:
        key_valid = np.asarray(mask, dtype=bool).reshape(-1, s)
        if key_valid.shape[0] != b:
            key_valid = np.broadcast_to(key_valid, (b, s))
        bias = bias + np.where(key_valid, 0.0, MASK_FILL)[:, None, None, :]
    if causal:
        bias = bias + np.triu(np.full((s, s), MASK_FILL), k=1)
    if mask is not None or causal:
        logits = logits + bias
    probs = nx.softmax(logits, axis=-1)
    if on_attention is not None:
        on_attention(probs.data)
    out = nx.transpose(probs @ v, (0, 2, 1, 3)).reshape(b, s, c)
    out = out @ params.w_out + params.b_out
    if key_valid is not None:
        out = out * key_valid[:, :, None].astype(np.float64)
    return out.reshape(*lead, s, c)


def mlp(h: Tensor, params: Block) -> Tensor:
    return nx.gelu(h @ params.w_fc + params.b_fc) @ params.w_proj + params.b_proj


def attention_block(
    x,
    params: Block,
    mask=None,
    causal: bool = False,
    attn_input: Callable[[Tensor], Tensor] | None = None,
    on_attention=None,
) -> Tensor:
    """y = x + MHSA(LN(a)) with a = attn_input(x) (default x); then y + MLP(LN(y)).

    ``mask`` marks valid positions with True; invalid positions neither attend
    nor are attended to. The residual always carries the untransformed ``x``.
    """
    x = nx.as_tensor(x)
    if x.ndim < 2 or x.shape[-1] != params.channels:
        raise ValueError(f"expected (..., S, {params.channels}) tokens, got {x.shape}")
    if mask is not None and np.asarray(mask).shape[-1] != x.shape[-2]:
        raise ValueError(f"mask length {np.asarray(mask).shape[-1]} != sequence length {x.shape[-2]}")
    a = attn_input(x) if attn_input is not None else x
    h = nx.layer_norm(a, params.ln1_g, params.ln1_b)
    y = x + multi_head_attention(h, params, mask=mask, causal=causal, on_attention=on_attention)
    return y + mlp(nx.layer_norm(y, params.ln2_g, params.ln2_b), params)


@dataclass
class TextBatch:
    token_ids: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.token_ids.ndim != 2:
            raise ValueError("token_ids must be B x L")
        b, l = self.token_ids.shape
        if self.lengths.shape != (b,):
            raise ValueError("lengths must have one entry per sequence")
        if np.any(self.lengths < 1) or np.any(self.lengths > l):
            raise ValueError("every length must lie in [1, L]")

    @property
    def eos_position(self) -> np.ndarray:
        return self.lengths - 1

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.token_ids.shape[1])[None, :] < self.lengths[:, None]

    @classmethod
    def from_sequences(cls, seqs, pad_id: int, length: int | None = None) -> "TextBatch":
        length = length or max(len(s) for s in seqs)
        ids = np.full((len(seqs), length), pad_id, dtype=np.int64)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
        return cls(ids, np.array([len(s) for s in seqs]))


class TextEncoder(Module):
    """GPT-style causal encoder; the query embedding is the feature at [EOS]."""

    def __init__(self, vocab_size, max_len, channels, heads, mlp_ratio, layers, rng):
        self.vocab_size, self.max_len = vocab_size, max_len
        self.token_embed = init_normal(rng, vocab_size, channels)
        self.pos_embed = init_normal(rng, max_len, channels, std=0.01)
        self.block = [Block(channels, heads, mlp_ratio, rng) for _ in range(layers)]
        self.ln_final_g, self.ln_final_b = ones_param(channels), zeros_param(channels)
        self.proj = init_normal(rng, channels, channels, std=channels**-0.5)

    def __call__(self, batch: TextBatch) -> Tensor:
        return encode_text(batch, self)


def encode_text(batch: TextBatch, params: TextEncoder) -> Tensor:
    ids = batch.token_ids
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise ValueError(f"token id out of vocabulary [0, {params.vocab_size})")
    b, l = ids.shape
    if l > params.max_len:
        raise ValueError(f"sequence length {l} exceeds max_len {params.max_len}")
    x = params.token_embed[ids] + params.pos_embed[:l]
    mask = batch.mask
    for blk in params.block:
        x = blk(x, mask=mask, causal=True)
    eos = x[np.arange(b), batch.eos_position]
    return nx.layer_norm(eos, params.ln_final_g, params.ln_final_b) @ params.proj


class FrameEmbed(Module):
    """Linear patch projection, learned [CLS] at position 0, learned positions."""

    def __init__(self, n_patches, patch_dim, channels, rng):
        self.n_patches, self.patch_dim = n_patches, patch_dim
        self.patch_proj = init_normal(rng, patch_dim, channels, std=patch_dim**-0.5)
        self.cls = init_normal(rng, channels)
        self.pos_embed = init_normal(rng, n_patches + 1, channels, std=0.01)

    def __call__(self, patches) -> Tensor:
        return embed_frame(patches, self)


def embed_frame(patches, params: FrameEmbed) -> Tensor:
    """(..., N, patch_dim) patches -> (..., N+1, C) tokens with [CLS] first."""
    patches = nx.as_tensor(patches)
    if patches.ndim < 2 or patches.shape[-2:] != (params.n_patches, params.patch_dim):
        raise ValueError(
            f"expected (..., {params.n_patches}, {params.patch_dim}) patches, got {patches.shape}"
        )
    tokens = patches @ params.patch_proj
    c = tokens.shape[-1]
    cls = np.zeros(patches.shape[:-2] + (1, c)) + params.cls
    return nx.concatenate([cls, tokens], axis=-2) + params.pos_embed
