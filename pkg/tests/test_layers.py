"""Layer zoo behavior: composite blocks, masked context conv, graph runner."""

import numpy as np
import pytest

from licodec.errors import ShapeError
from licodec.layers import (LayerSpec, ModelGraph, attention_block,
                            checkerboard_kernel_mask, drm_forward, leaky_relu,
                            masked_context_conv, residual_block,
                            round_half_away, run_graph)


def zeros_for(spec):
    return {n: np.zeros(s, dtype=np.float32) for n, s in spec.weight_shapes().items()}


class TestQuantizer:
    def test_half_away_from_zero(self):
        x = np.array([0.5, -0.5, 1.49, -1.5, 2.5, 0.0], dtype=np.float32)
        assert list(round_half_away(x)) == [1, -1, 1, -2, 3, 0]


class TestLeakyRelu:
    def test_slope(self):
        x = np.array([-2.0, 3.0], dtype=np.float32)
        out = leaky_relu(x)
        assert out[0] == pytest.approx(-0.02, rel=1e-6)
        assert out[1] == 3.0


class TestResidualBlock:
    def test_zero_weights_pass_through(self, rng):
        spec = LayerSpec("residual_block", 4, 4, name="rb")
        x = rng.standard_normal((4, 6, 6)).astype(np.float32)
        assert np.array_equal(residual_block(x, zeros_for(spec), "rb"), x)


class TestAttention:
    def test_zero_trunk_weights_identity(self, rng):
        spec = LayerSpec("attention_block", 4, 4, name="at")
        w = zeros_for(spec)
        rng2 = np.random.default_rng(3)
        for name in w:  # random mask branch, zero trunk branch
            if ".m" in name:
                w[name] = rng2.standard_normal(w[name].shape).astype(np.float32) * 0.2
        x = rng.standard_normal((4, 6, 6)).astype(np.float32)
        assert np.array_equal(attention_block(x, w, "at"), x)

    def test_zero_mask_gives_half_gate(self, rng):
        spec = LayerSpec("attention_block", 2, 2, name="at")
        w = zeros_for(spec)
        rng2 = np.random.default_rng(4)
        for name in w:  # random trunk branch, zero mask branch
            if ".t" in name:
                w[name] = rng2.standard_normal(w[name].shape).astype(np.float32) * 0.2
        x = rng.standard_normal((2, 5, 5)).astype(np.float32)
        out = attention_block(x, w, "at")
        # recompute trunk(x) with a gate of exactly 0.5
        t = x
        for u in range(3):
            from licodec.layers import _bottleneck_unit
            t = _bottleneck_unit(t, w, f"at.t{u}", 1)
        from licodec import backend
        trunk = backend.conv2d(t, w["at.tp.w"], w["at.tp.b"], 1, 0, 1)
        assert np.allclose(out, x + trunk * 0.5, atol=1e-6)

    def test_random_vs_composed_oracle(self, rng):
        spec = LayerSpec("attention_block", 2, 2, name="at")
        w = {n: (rng.standard_normal(s) * 0.2).astype(np.float32)
             for n, s in spec.weight_shapes().items()}
        x = rng.standard_normal((2, 4, 4)).astype(np.float32)
        out = attention_block(x, w, "at")

        def conv_ref(inp, kw, kb, pad):
            c_o, c_i, kh, _ = kw.shape
            h, wd = inp.shape[1:]
            res = np.zeros((c_o, h, wd))
            inp_p = np.pad(inp.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
            for o in range(c_o):
                res[o] = kb[o]
                for ci in range(c_i):
                    for ky in range(kh):
                        for kx in range(kh):
                            res[o] += kw[o, ci, ky, kx] * inp_p[ci, ky:ky + h, kx:kx + wd]
            return res

        def unit_ref(inp, pre):
            t = conv_ref(inp, w[f"{pre}.a.w"], w[f"{pre}.a.b"], 0)
            t = np.where(t > 0, t, 0.01 * t)
            t = conv_ref(t, w[f"{pre}.b.w"], w[f"{pre}.b.b"], 1)
            t = np.where(t > 0, t, 0.01 * t)
            return inp + conv_ref(t, w[f"{pre}.c.w"], w[f"{pre}.c.b"], 0)

        t = m = x.astype(np.float64)
        for u in range(3):
            t = unit_ref(t, f"at.t{u}")
            m = unit_ref(m, f"at.m{u}")
        trunk = conv_ref(t, w["at.tp.w"], w["at.tp.b"], 0)
        gate = 1.0 / (1.0 + np.exp(-conv_ref(m, w["at.mp.w"], w["at.mp.b"], 0)))
        ref = x + trunk * gate
        assert np.abs(out - ref).max() <= 1e-5


class TestDrm:
    def test_zero_paths_reduce_to_shortcut(self, rng):
        spec = LayerSpec("drm_down", 3, 3, name="drm")
        w = zeros_for(spec)
        rng2 = np.random.default_rng(5)
        w["drm.sc.w"] = rng2.standard_normal(w["drm.sc.w"].shape).astype(np.float32)
        x = rng.standard_normal((3, 8, 8)).astype(np.float32)
        out = drm_forward(x, w, "drm", "down")
        from licodec import backend
        short = backend.conv2d(x, w["drm.sc.w"], w["drm.sc.b"], 2, 0, 1)
        assert np.array_equal(out, short)

    def test_zero_offsets_reduce_to_residual_composition(self, rng):
        # with zero offset weights the deformable path is a plain conv path
        spec = LayerSpec("drm_down", 2, 2, name="drm")
        w = {n: (rng.standard_normal(s) * 0.3).astype(np.float32)
             for n, s in spec.weight_shapes().items()}
        w["drm.off.w"] = np.zeros_like(w["drm.off.w"])
        w["drm.off.b"] = np.zeros_like(w["drm.off.b"])
        x = rng.standard_normal((2, 6, 6)).astype(np.float32)
        out = drm_forward(x, w, "drm", "down")
        from licodec import backend
        t = backend.conv2d(x, w["drm.def.w"], w["drm.def.b"], 1, 1, 1)
        t = leaky_relu(t)
        main = backend.conv2d(t, w["drm.cls.w"], w["drm.cls.b"], 2, 1, 1)
        short = backend.conv2d(x, w["drm.sc.w"], w["drm.sc.b"], 2, 0, 1)
        assert np.array_equal(out, main + short)

    def test_up_direction_doubles(self, rng):
        spec = LayerSpec("drm_up", 2, 2, name="drm")
        w = {n: (rng.standard_normal(s) * 0.1).astype(np.float32)
             for n, s in spec.weight_shapes().items()}
        x = rng.standard_normal((2, 5, 7)).astype(np.float32)
        assert drm_forward(x, w, "drm", "up").shape == (2, 10, 14)


class TestMaskedContextConv:
    def test_kernel_mask_parity(self):
        m = checkerboard_kernel_mask(5)
        assert not m[2, 2]  # center masked
        assert m.sum() == 12  # odd-parity taps in a 5x5 window
        for di in range(5):
            for dj in range(5):
                assert m[di, dj] == (((di - 2) + (dj - 2)) % 2 == 1)

    def test_center_only_kernel_gives_zero(self, rng):
        w = {"ctx.w": np.zeros((2, 2, 5, 5), dtype=np.float32),
             "ctx.b": np.zeros(2, dtype=np.float32)}
        w["ctx.w"][:, :, 2, 2] = 7.0
        y1 = rng.standard_normal((2, 6, 6)).astype(np.float32)
        assert np.array_equal(masked_context_conv(y1, w), np.zeros((2, 6, 6)))

    def test_nonanchor_positions_do_not_leak(self, rng):
        # the context feature read at non-anchor centers (the only values the
        # decoder uses) never sees non-anchor data: their taps land on anchors
        from licodec.checkerboard import make_masks
        w = {"ctx.w": rng.standard_normal((1, 1, 5, 5)).astype(np.float32),
             "ctx.b": np.zeros(1, dtype=np.float32)}
        mask = make_masks(8, 8)
        y = rng.standard_normal((1, 8, 8)).astype(np.float32)
        y1 = (y * mask.anchor).astype(np.float32)
        base = masked_context_conv(y1, w)
        pert = y1.copy()
        pert[0][mask.nonanchor] += 10.0  # inject non-anchor data
        out = masked_context_conv(pert.astype(np.float32), w)
        assert np.array_equal(out[0][mask.nonanchor], base[0][mask.nonanchor])

    def test_equals_conv_with_masked_taps(self, rng):
        from licodec import backend
        w = {"ctx.w": rng.standard_normal((3, 3, 5, 5)).astype(np.float32),
             "ctx.b": rng.standard_normal(3).astype(np.float32)}
        y1 = rng.standard_normal((3, 7, 9)).astype(np.float32)
        wm = w["ctx.w"] * checkerboard_kernel_mask(5).astype(np.float32)
        ref = backend.conv2d(np.ascontiguousarray(y1),
                             np.ascontiguousarray(wm), w["ctx.b"], 1, 2, 1)
        assert np.abs(masked_context_conv(y1, w) - ref).max() <= 1e-6

    def test_wrong_kernel_size(self, rng):
        w = {"ctx.w": np.zeros((1, 1, 3, 3), dtype=np.float32),
             "ctx.b": np.zeros(1, np.float32)}
        with pytest.raises(ShapeError):
            masked_context_conv(rng.random((1, 4, 4), dtype=np.float32), w)


class TestRunGraph:
    def test_identity_micro_graph(self, rng):
        spec = LayerSpec("conv", 1, 1, kernel=1, stride=1, name="id")
        g = ModelGraph(role="analysis", layers=[spec],
                       weights={"id.w": np.ones((1, 1, 1, 1), np.float32),
                                "id.b": np.zeros(1, np.float32)})
        x = rng.random((1, 5, 5), dtype=np.float32)
        assert np.array_equal(run_graph(g, x), x)

    def test_missing_weight_names_layer(self, rng):
        spec = LayerSpec("conv", 1, 1, kernel=1, stride=1, name="id")
        g = ModelGraph(role="analysis", layers=[spec], weights={})
        with pytest.raises(ShapeError, match="layer 0"):
            run_graph(g, rng.random((1, 3, 3), dtype=np.float32))

    def test_shape_error_names_layer(self, rng):
        spec = LayerSpec("conv", 2, 1, kernel=3, stride=1, name="c0")
        g = ModelGraph(role="analysis", layers=[spec],
                       weights={"c0.w": np.zeros((1, 2, 3, 3), np.float32),
                                "c0.b": np.zeros(1, np.float32)})
        with pytest.raises(ShapeError, match="analysis"):
            run_graph(g, rng.random((3, 4, 4), dtype=np.float32))
