"""Temporal token shift and the shift-enabled frame encoder.

Tensors here follow the layout (..., T, N+1, C): frames, tokens with [CLS]
at index 0, channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .transformer import Block, FrameEmbed, Module, attention_block

TOKEN_SHIFT = "token_shift"
CHANNEL_SHIFT = "channel_shift"
VIS_CHANNEL_SHIFT = "vis_channel_shift"
CLS_CHANNEL_SHIFT = "cls_channel_shift"
NO_SHIFT = "none"
CHANNEL_MODES = (CHANNEL_SHIFT, VIS_CHANNEL_SHIFT, CLS_CHANNEL_SHIFT)
MODES = (TOKEN_SHIFT, *CHANNEL_MODES, NO_SHIFT)


@dataclass(frozen=True)
class ShiftPlan:
    mode: str = TOKEN_SHIFT
    layers: tuple[int, ...] = field(default_factory=tuple)
    ratio: float = 0.25

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown shift mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"shift ratio must lie in [0, 1], got {self.ratio}")
        object.__setattr__(self, "layers", tuple(sorted(set(int(i) for i in self.layers))))

    def validate_depth(self, depth: int) -> None:
        bad = [i for i in self.layers if not 1 <= i <= depth]
        if bad:
            raise ValueError(f"shift layers {bad} outside [1, {depth}]")

    def applies_to(self, layer_index: int) -> bool:
        return self.mode != NO_SHIFT and layer_index in self.layers

    def to_dict(self) -> dict:
        return {"mode": self.mode, "layers": list(self.layers), "ratio": self.ratio}


def top_layers(depth: int, count: int = 2) -> tuple[int, ...]:
    return tuple(range(max(1, depth - count + 1), depth + 1))


def shift_count(ratio: float, n: int) -> int:
    # guard against 0.25 * 16 landing at 3.9999...
    return min(n, int(math.floor(ratio * n + 1e-9)))


def _split(k: int) -> tuple[int, int]:
    fwd = (k + 1) // 2
    return fwd, k - fwd


def _from_previous(x: Tensor) -> Tensor:
    """out[t] = x[t-1], zeros at t = 0 (frame axis is -3)."""
    pad = np.zeros(x.shape[:-3] + (1,) + x.shape[-2:])
    return nx.concatenate([pad, x[..., :-1, :, :]], axis=-3)


def _from_next(x: Tensor) -> Tensor:
    """out[t] = x[t+1], zeros at t = T-1."""
    pad = np.zeros(x.shape[:-3] + (1,) + x.shape[-2:])
    return nx.concatenate([x[..., 1:, :, :], pad], axis=-3)


def _cat(parts, axis) -> Tensor:
    parts = [p for p in parts if p.shape[axis] > 0]
    return parts[0] if len(parts) == 1 else nx.concatenate(parts, axis=axis)


def token_shift(grid, plan: ShiftPlan) -> Tensor:
    """Move whole token vectors across adjacent frames.

    With k = floor(ratio * N), tokens 1..ceil(k/2) take the previous frame's
    same-index token and the next floor(k/2) tokens take the following
    frame's; boundaries are zero-filled. [CLS] and the rest are copied.
    """
    if plan.mode != TOKEN_SHIFT:
        raise ValueError(f"token_shift needs mode {TOKEN_SHIFT!r}, got {plan.mode!r}")
    x = nx.as_tensor(grid)
    if x.ndim < 3:
        raise ValueError(f"expected (..., T, N+1, C), got {x.shape}")
    k = shift_count(plan.ratio, x.shape[-2] - 1)
    if k == 0:
        return x
    kf, kb = _split(k)
    fwd = _from_previous(x[..., 1 : 1 + kf, :])
    parts = [x[..., :1, :], fwd]
    if kb:
        parts.append(_from_next(x[..., 1 + kf : 1 + k, :]))
    parts.append(x[..., 1 + k :, :])
    return _cat(parts, axis=-2)


def channel_shift_variant(grid, plan: ShiftPlan) -> Tensor:
    """Channel-fraction temporal shift applied to all, spatial-only or [CLS]-only tokens."""
    if plan.mode not in CHANNEL_MODES:
        raise ValueError(f"channel_shift_variant needs one of {CHANNEL_MODES}, got {plan.mode!r}")
    x = nx.as_tensor(grid)
    c = shift_count(plan.ratio, x.shape[-1])
    if c == 0:
        return x
    cf, cb = _split(c)
    pieces = [_from_previous(x[..., :cf])]
    if cb:
        pieces.append(_from_next(x[..., cf:c]))
    pieces.append(x[..., c:])
    shifted = _cat(pieces, axis=-1)
    if plan.mode == CHANNEL_SHIFT:
        return shifted
    if plan.mode == VIS_CHANNEL_SHIFT:
        return _cat([x[..., :1, :], shifted[..., 1:, :]], axis=-2)
    return _cat([shifted[..., :1, :], x[..., 1:, :]], axis=-2)


def apply_shift(grid, plan: ShiftPlan) -> Tensor:
    if plan.mode == TOKEN_SHIFT:
        return token_shift(grid, plan)
    if plan.mode in CHANNEL_MODES:
        return channel_shift_variant(grid, plan)
    return nx.as_tensor(grid)


def shift_block(grid, params: Block, plan: ShiftPlan, layer_index: int) -> Tensor:
    """One frame-encoder block; shifted layers attend over the shifted input.

    Attention is spatial (within each frame); the residual carries the
    unshifted grid.
    """
    if layer_index < 1:
        raise ValueError("layer_index is 1-based")
    if plan.applies_to(layer_index):
        return attention_block(grid, params, attn_input=lambda x: apply_shift(x, plan))
    return attention_block(grid, params)


class VideoEncoder(Module):
    """Per-frame ViT with token shift in the planned layers."""

    def __init__(self, n_patches, patch_dim, channels, heads, mlp_ratio, layers, rng):
        self.embed = FrameEmbed(n_patches, patch_dim, channels, rng)
        self.block = [Block(channels, heads, mlp_ratio, rng) for _ in range(layers)]

    def named_parameters(self, prefix: str = ""):
        # embedding parameters live at the tower root: video.patch_proj, video.cls, ...
        yield from self.embed.named_parameters(prefix)
        for i, blk in enumerate(self.block, 1):
            yield from blk.named_parameters(f"{prefix}block{i}.")

    def __call__(self, frames, plan: ShiftPlan) -> Tensor:
        return encode_video(frames, self, plan)


def encode_video(frames, params: VideoEncoder, plan: ShiftPlan) -> Tensor:
    """(..., T, N, patch_dim) raw patches -> (..., T, N+1, C) final-layer tokens."""
    frames = nx.as_tensor(frames)
    if frames.ndim < 3:
        raise ValueError(f"expected (..., T, N, patch_dim) frames, got {frames.shape}")
    plan.validate_depth(len(params.block))
    x = params.embed(frames)
    for i, blk in enumerate(params.block, 1):
        x = shift_block(x, blk, plan, i)
    return x
