import itertools

import numpy as np
import pytest

from shiftselect.numerics import Tensor, grad_check
from shiftselect.transformer import Block, attention_block
from shiftselect.tokenshift import (
    CHANNEL_SHIFT,
    CLS_CHANNEL_SHIFT,
    NO_SHIFT,
    TOKEN_SHIFT,
    VIS_CHANNEL_SHIFT,
    ShiftPlan,
    VideoEncoder,
    channel_shift_variant,
    encode_video,
    shift_block,
    shift_count,
    token_shift,
    top_layers,
)


def index_grid(t, n, c=1):
    """in[t][j] = 10 t + j, broadcast over channels."""
    base = 10.0 * np.arange(t)[:, None] + np.arange(n + 1)[None, :]
    return np.repeat(base[..., None], c, axis=-1)


def expected_shift(grid, ratio):
    """Loop oracle written from the index rules."""
    t_count, n1, _ = grid.shape
    n = n1 - 1
    k = int(np.floor(ratio * n + 1e-9))
    kf = (k + 1) // 2
    out = grid.copy()
    for t in range(t_count):
        for j in range(1, k + 1):
            src = t - 1 if j <= kf else t + 1
            out[t, j] = grid[src, j] if 0 <= src < t_count else 0.0
    return out


class TestTokenShift:
    def test_ratio_zero(self):
        g = np.random.default_rng(0).normal(size=(3, 5, 4))
        np.testing.assert_array_equal(token_shift(g, ShiftPlan(TOKEN_SHIFT, (), 0.0)).data, g)

    def test_hand_example(self):
        out = token_shift(index_grid(3, 4), ShiftPlan(TOKEN_SHIFT, (), 0.5)).data[..., 0]
        np.testing.assert_array_equal(out[:, 1], [0, 1, 11])
        np.testing.assert_array_equal(out[:, 2], [12, 22, 0])
        for j in (0, 3, 4):
            np.testing.assert_array_equal(out[:, j], index_grid(3, 4)[:, j, 0])

    @pytest.mark.parametrize("ratio", [0.25, 0.5, 1.0])
    def test_single_frame_zeroes_shifted(self, ratio):
        g = np.random.default_rng(1).normal(size=(1, 9, 3))
        out = token_shift(g, ShiftPlan(TOKEN_SHIFT, (), ratio)).data
        k = shift_count(ratio, 8)
        assert np.all(out[0, 1 : 1 + k] == 0)
        np.testing.assert_array_equal(out[0, 1 + k :], g[0, 1 + k :])
        np.testing.assert_array_equal(out[0, 0], g[0, 0])

    def test_matches_loop_oracle_exhaustively(self):
        rng = np.random.default_rng(2)
        for t, n, ratio in itertools.product(range(1, 6), range(1, 9), (0.0, 0.25, 0.5, 1.0)):
            g = rng.normal(size=(t, n + 1, 3))
            np.testing.assert_array_equal(token_shift(g, ShiftPlan(TOKEN_SHIFT, (), ratio)).data, expected_shift(g, ratio))

    def test_integrity_rows_are_copies_or_zero(self):
        g = np.random.default_rng(3).normal(size=(4, 9, 5))
        out = token_shift(g, ShiftPlan(TOKEN_SHIFT, (), 0.5)).data
        rows = {r.tobytes() for r in g.reshape(-1, 5)}
        for r in out.reshape(-1, 5):
            assert r.tobytes() in rows or not r.any()

    def test_commutes_with_channel_permutation(self):
        g = np.random.default_rng(4).normal(size=(3, 5, 6))
        perm = np.random.default_rng(5).permutation(6)
        plan = ShiftPlan(TOKEN_SHIFT, (), 0.5)
        np.testing.assert_array_equal(token_shift(g[..., perm], plan).data, token_shift(g, plan).data[..., perm])

    def test_batched(self):
        g = np.random.default_rng(6).normal(size=(2, 3, 5, 2))
        plan = ShiftPlan(TOKEN_SHIFT, (), 0.5)
        out = token_shift(g, plan).data
        for b in range(2):
            np.testing.assert_array_equal(out[b], token_shift(g[b], plan).data)

    def test_wrong_mode(self):
        with pytest.raises(ValueError):
            token_shift(np.zeros((2, 3, 1)), ShiftPlan(CHANNEL_SHIFT, (), 0.5))

    def test_shift_count_floor(self):
        assert shift_count(0.25, 16) == 4
        assert shift_count(0.25, 7) == 1
        assert shift_count(1.0, 3) == 3

    def test_gradient_is_transpose_permutation(self):
        plan = ShiftPlan(TOKEN_SHIFT, (), 0.5)
        w = np.random.default_rng(7).normal(size=(3, 5, 2))
        report = grad_check(lambda g: (token_shift(g, plan) * Tensor(w)).sum(), [np.zeros((3, 5, 2))], tol=1e-8)
        assert report.passed


class TestChannelVariants:
    @pytest.mark.parametrize("mode", [CHANNEL_SHIFT, VIS_CHANNEL_SHIFT, CLS_CHANNEL_SHIFT])
    def test_ratio_zero(self, mode):
        g = np.random.default_rng(0).normal(size=(3, 4, 4))
        np.testing.assert_array_equal(channel_shift_variant(g, ShiftPlan(mode, (), 0.0)).data, g)

    def test_cls_variant_leaves_spatial_tokens(self):
        g = np.random.default_rng(1).normal(size=(3, 4, 4))
        out = channel_shift_variant(g, ShiftPlan(CLS_CHANNEL_SHIFT, (), 0.5)).data
        np.testing.assert_array_equal(out[:, 1:], g[:, 1:])
        assert not np.array_equal(out[:, 0], g[:, 0])

    def test_vis_variant_leaves_cls(self):
        g = np.random.default_rng(2).normal(size=(3, 4, 4))
        out = channel_shift_variant(g, ShiftPlan(VIS_CHANNEL_SHIFT, (), 0.5)).data
        np.testing.assert_array_equal(out[:, 0], g[:, 0])

    def test_constant_grid(self):
        out = channel_shift_variant(np.ones((2, 3, 4)), ShiftPlan(CHANNEL_SHIFT, (), 0.5)).data
        # channel 0 moves forward in time, channel 1 backward
        assert np.all(out[0, :, 0] == 0) and np.all(out[1, :, 0] == 1)
        assert np.all(out[0, :, 1] == 1) and np.all(out[1, :, 1] == 0)
        assert np.all(out[:, :, 2:] == 1)

    def test_channel_variant_mixes_tokens(self):
        g = np.random.default_rng(3).normal(size=(3, 4, 4))
        out = channel_shift_variant(g, ShiftPlan(CHANNEL_SHIFT, (), 0.5)).data
        rows = {r.tobytes() for r in g.reshape(-1, 4)}
        assert any(r.tobytes() not in rows and r.any() for r in out[1])

    def test_wrong_mode(self):
        with pytest.raises(ValueError):
            channel_shift_variant(np.zeros((2, 3, 2)), ShiftPlan(TOKEN_SHIFT, (), 0.5))


class TestPlan:
    def test_ratio_bounds(self):
        with pytest.raises(ValueError):
            ShiftPlan(TOKEN_SHIFT, (1,), 1.5)

    def test_depth_check(self):
        with pytest.raises(ValueError):
            ShiftPlan(TOKEN_SHIFT, (5,), 0.25).validate_depth(4)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            ShiftPlan("sideways", (1,), 0.25)

    def test_top_layers(self):
        assert top_layers(4) == (3, 4)
        assert top_layers(12) == (11, 12)

    def test_none_never_applies(self):
        assert not ShiftPlan(NO_SHIFT, (1, 2), 0.25).applies_to(1)


def tiny_block(seed=0, zero=False):
    blk = Block(6, 2, 2.0, np.random.default_rng(seed))
    if zero:
        for _, p in blk.named_parameters():
            p.data = np.zeros_like(p.data)
    return blk


class TestShiftBlock:
    def test_disabled_equals_attention_block(self):
        g = np.random.default_rng(0).normal(size=(3, 5, 6))
        blk = tiny_block()
        plan = ShiftPlan(TOKEN_SHIFT, (), 0.5)
        np.testing.assert_array_equal(shift_block(g, blk, plan, 1).data, attention_block(g, blk).data)

    def test_zero_weights_residual_only(self):
        g = np.random.default_rng(1).normal(size=(3, 5, 6))
        out = shift_block(g, tiny_block(zero=True), ShiftPlan(TOKEN_SHIFT, (1,), 0.5), 1).data
        np.testing.assert_array_equal(out, g)

    def test_cross_frame_gradient(self):
        blk = tiny_block(2)
        g = Tensor(np.random.default_rng(3).normal(size=(3, 5, 6)), requires_grad=True)
        out = shift_block(g, blk, ShiftPlan(TOKEN_SHIFT, (1,), 0.5), 1)
        out[1].sum().backward()
        assert np.abs(g.grad[0, 1]).sum() > 0
        # token 3 is not in the shift set, so frame 0 reaches frame 1 only through token 1
        assert np.abs(g.grad[0, 3]).sum() == 0

    def test_unshifted_layer_has_no_cross_frame_gradient(self):
        blk = tiny_block(2)
        g = Tensor(np.random.default_rng(3).normal(size=(3, 5, 6)), requires_grad=True)
        shift_block(g, blk, ShiftPlan(TOKEN_SHIFT, (2,), 0.5), 1)[1].sum().backward()
        assert np.abs(g.grad[0]).sum() == 0

    def test_bad_layer_index(self):
        with pytest.raises(ValueError):
            shift_block(np.zeros((2, 3, 6)), tiny_block(), ShiftPlan(), 0)


def tiny_encoder(seed=0):
    return VideoEncoder(n_patches=4, patch_dim=3, channels=6, heads=2, mlp_ratio=2.0, layers=2, rng=np.random.default_rng(seed))


class TestEncodeVideo:
    @pytest.mark.parametrize("t", [1, 8])
    def test_shape(self, t):
        out = encode_video(np.zeros((t, 4, 3)), tiny_encoder(), ShiftPlan(TOKEN_SHIFT, (2,), 0.25))
        assert out.shape == (t, 5, 6)

    def test_identical_frames_without_shift(self):
        frame = np.random.default_rng(1).normal(size=(4, 3))
        out = encode_video(np.stack([frame] * 4), tiny_encoder(), ShiftPlan(NO_SHIFT, (), 0.25)).data
        for t in range(1, 4):
            np.testing.assert_array_equal(out[t], out[0])

    def test_identical_frames_with_shift(self):
        frame = np.random.default_rng(1).normal(size=(4, 3))
        # one shifted layer: the zero-padding effect reaches only the boundary frames
        out = encode_video(np.stack([frame] * 5), tiny_encoder(), ShiftPlan(TOKEN_SHIFT, (2,), 0.5)).data
        for t in (2, 3):
            np.testing.assert_allclose(out[t], out[1], atol=1e-12)
        assert not np.allclose(out[0], out[1])
        assert not np.allclose(out[4], out[1])

    def test_full_stack_gradient(self):
        enc = tiny_encoder(3)
        plan = ShiftPlan(TOKEN_SHIFT, (1, 2), 0.5)
        frames = np.random.default_rng(4).normal(size=(3, 4, 3))
        w = np.random.default_rng(5).normal(size=(3, 5, 6))

        def loss(x, w_qkv):
            enc.block[0].w_qkv = w_qkv
            return (encode_video(x, enc, plan) * Tensor(w)).sum()

        report = grad_check(loss, [frames, enc.block[0].w_qkv.data.copy()], tol=1e-4, entries=20)
        assert report.passed, report

    def test_parameter_names(self):
        names = [n for n, _ in tiny_encoder().named_parameters("video.")]
        assert names[:3] == ["video.patch_proj", "video.cls", "video.pos_embed"]
        assert "video.block2.w_qkv" in names
