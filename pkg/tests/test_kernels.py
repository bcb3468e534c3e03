"""Kernel-level checks against independent brute-force oracles."""

import numpy as np
import pytest

from licodec.backend import HAVE_EXT
from licodec.errors import ShapeError

RTOL = 1e-5


def conv_oracle(x, w, b, stride, pad):
    """Six-nested-loop cross-correlation in float64."""
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((o, oh, ow))
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                acc = float(b[oc])
                for ci in range(c):
                    for ky in range(kh):
                        for kx in range(kw):
                            yy, xx = i * stride - pad + ky, j * stride - pad + kx
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += float(w[oc, ci, ky, kx]) * float(x[ci, yy, xx])
                out[oc, i, j] = acc
    return out


def deconv_oracle(x, w, b, stride, pad):
    """Scatter-add transposed convolution in float64."""
    c, h, wd = x.shape
    _, o, kh, kw = w.shape
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (wd - 1) * stride - 2 * pad + kw
    out = np.zeros((o, oh, ow))
    out += np.asarray(b, dtype=np.float64)[:, None, None]
    for ci in range(c):
        for oc in range(o):
            for i in range(h):
                for j in range(wd):
                    for ky in range(kh):
                        for kx in range(kw):
                            yy, xx = i * stride - pad + ky, j * stride - pad + kx
                            if 0 <= yy < oh and 0 <= xx < ow:
                                out[oc, yy, xx] += float(w[ci, oc, ky, kx]) * float(x[ci, i, j])
    return out


def deform_oracle(x, offsets, w, b):
    """Bilinear-sampling brute force in float64; OOB reads zero."""
    o, c, k, _ = w.shape
    _, h, wd = x.shape
    pad = k // 2
    lim = k + 1

    def sample(ci, py, px):
        y0, x0 = int(np.floor(py)), int(np.floor(px))
        fy, fx = py - y0, px - x0
        acc = 0.0
        for dy in (0, 1):
            for dx in (0, 1):
                yy, xx = y0 + dy, x0 + dx
                if 0 <= yy < h and 0 <= xx < wd:
                    wgt = (fy if dy else 1 - fy) * (fx if dx else 1 - fx)
                    acc += wgt * float(x[ci, yy, xx])
        return acc

    out = np.zeros((o, h, wd))
    for oc in range(o):
        for i in range(h):
            for j in range(wd):
                acc = float(b[oc])
                for ci in range(c):
                    for ky in range(k):
                        for kx in range(k):
                            t = ky * k + kx
                            dy = float(np.clip(offsets[2 * t, i, j], -lim, lim))
                            dx = float(np.clip(offsets[2 * t + 1, i, j], -lim, lim))
                            acc += float(w[oc, ci, ky, kx]) * sample(
                                ci, i - pad + ky + dy, j - pad + kx + dx)
                out[oc, i, j] = acc
    return out


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-12)


class TestConv:
    def test_identity_1x1(self, kernels, rng):
        x = rng.random((3, 5, 6), dtype=np.float32)
        w = np.ones((3, 3, 1, 1), dtype=np.float32) * np.eye(3, dtype=np.float32)[:, :, None, None]
        out = kernels.conv2d(x, np.ascontiguousarray(w), np.zeros(3, np.float32), 1, 0, 1)
        assert np.array_equal(out, x)

    def test_averaging_preserves_constants(self, kernels):
        x = np.full((1, 7, 7), 3.25, dtype=np.float32)
        w = np.full((1, 1, 3, 3), 1.0 / 9.0, dtype=np.float32)
        out = kernels.conv2d(x, w, np.zeros(1, np.float32), 1, 1, 1)
        assert np.allclose(out[0, 1:-1, 1:-1], 3.25, atol=1e-6)

    def test_random_case_vs_oracle(self, kernels, rng):
        x = rng.standard_normal((2, 4, 4)).astype(np.float32)
        w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        out = kernels.conv2d(x, w, b, 1, 1, 1)
        assert rel_err(out, conv_oracle(x, w, b, 1, 1)) <= RTOL

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_shapes_sweep_vs_oracle(self, kernels, rng, stride, pad):
        for c, h, w_, o, k in [(1, 3, 5, 2, 1), (3, 6, 4, 1, 3), (4, 8, 8, 3, 3),
                               (2, 5, 7, 4, 5)]:
            if h + 2 * pad < k or w_ + 2 * pad < k:
                continue
            x = rng.standard_normal((c, h, w_)).astype(np.float32)
            w = rng.standard_normal((o, c, k, k)).astype(np.float32)
            b = rng.standard_normal(o).astype(np.float32)
            out = kernels.conv2d(x, w, b, stride, pad, 1)
            assert rel_err(out, conv_oracle(x, w, b, stride, pad)) <= RTOL

    def test_channel_mismatch_raises(self, kernels, rng):
        x = rng.random((2, 4, 4), dtype=np.float32)
        w = rng.random((1, 3, 3, 3), dtype=np.float32)
        with pytest.raises(ShapeError):
            kernels.conv2d(x, w, np.zeros(1, np.float32), 1, 1, 1)

    def test_threads_do_not_change_output(self, kernels, rng):
        x = rng.standard_normal((4, 9, 9)).astype(np.float32)
        w = rng.standard_normal((5, 4, 3, 3)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        a = kernels.conv2d(x, w, b, 1, 1, 1)
        for t in (2, 4, 8):
            assert np.array_equal(a, kernels.conv2d(x, w, b, 1, 1, t))


class TestDeconv:
    def test_identity_unit_kernel(self, kernels, rng):
        x = rng.random((2, 4, 5), dtype=np.float32)
        w = np.eye(2, dtype=np.float32)[:, :, None, None]
        out = kernels.deconv2d(x, np.ascontiguousarray(w), np.zeros(2, np.float32), 1, 0, 1)
        assert np.array_equal(out, x)

    def test_single_tap_scatter(self, kernels):
        x = np.full((1, 1, 1), 2.5, dtype=np.float32)
        w = np.ones((1, 1, 2, 2), dtype=np.float32)
        out = kernels.deconv2d(x, w, np.zeros(1, np.float32), 2, 0, 1)
        assert out.shape == (1, 2, 2)
        assert np.array_equal(out, np.full((1, 2, 2), 2.5, dtype=np.float32))

    @pytest.mark.parametrize("stride,pad,k", [(2, 1, 4), (2, 0, 2), (1, 0, 3), (1, 2, 3)])
    def test_random_vs_scatter_oracle(self, kernels, rng, stride, pad, k):
        x = rng.standard_normal((3, 4, 5)).astype(np.float32)
        w = rng.standard_normal((3, 2, k, k)).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        out = kernels.deconv2d(x, w, b, stride, pad, 1)
        ref = deconv_oracle(x, w, b, stride, pad)
        assert out.shape == ref.shape
        assert rel_err(out, ref) <= RTOL

    def test_output_size_formula(self, kernels, rng):
        x = rng.random((1, 6, 7), dtype=np.float32)
        w = rng.random((1, 1, 4, 4), dtype=np.float32)
        out = kernels.deconv2d(x, w, np.zeros(1, np.float32), 2, 1, 1)
        assert out.shape == (1, (6 - 1) * 2 - 2 + 4, (7 - 1) * 2 - 2 + 4)


class TestDeformConv:
    def test_zero_offsets_equal_conv_exactly(self, kernels, rng):
        x = rng.standard_normal((3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        off = np.zeros((18, 8, 8), dtype=np.float32)
        a = kernels.deform_conv2d(x, off, w, b, 1)
        c = kernels.conv2d(x, w, b, 1, 1, 1)
        assert np.array_equal(a, c)

    def test_integer_offset_equals_shifted_conv(self, kernels, rng):
        # every tap shifted one column right == conv over column-shifted input
        x = rng.standard_normal((2, 6, 6)).astype(np.float32)
        w = rng.standard_normal((2, 2, 3, 3)).astype(np.float32)
        b = np.zeros(2, dtype=np.float32)
        off = np.zeros((18, 6, 6), dtype=np.float32)
        off[1::2] = 1.0  # dx = +1 for every tap
        a = kernels.deform_conv2d(x, off, w, b, 1)
        xs = np.zeros_like(x)
        xs[:, :, :-1] = x[:, :, 1:]  # shift left so tap +1 lands on original
        c = kernels.conv2d(xs, w, b, 1, 1, 1)
        # column 0 differs: the shifted input pads zero where the deformable
        # tap still reads a real sample, so compare away from the left edge
        assert rel_err(a[:, :, 1:], c.astype(np.float64)[:, :, 1:]) <= RTOL

    def test_half_offset_bilinear_midpoint(self, kernels):
        # single-tap kernel on a horizontal ramp: +0.5 in x samples the midpoint
        h, w_ = 5, 6
        ramp = np.tile(np.arange(w_, dtype=np.float32), (h, 1))[None]
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0  # center tap only
        off = np.zeros((18, h, w_), dtype=np.float32)
        off[2 * 4 + 1] = 0.5  # center tap dx
        out = kernels.deform_conv2d(ramp, off, w, np.zeros(1, np.float32), 1)
        inner = out[0, :, :-1]
        expect = ramp[0, :, :-1] + 0.5
        assert np.allclose(inner, expect, atol=1e-6)

    def test_random_offsets_vs_oracle_sweep(self, kernels, rng):
        for _ in range(5):
            c, o, h, w_ = 2, 3, 6, 5
            x = rng.standard_normal((c, h, w_)).astype(np.float32)
            w = rng.standard_normal((o, c, 3, 3)).astype(np.float32)
            b = rng.standard_normal(o).astype(np.float32)
            off = (rng.standard_normal((18, h, w_)) * 2.0).astype(np.float32)
            out = kernels.deform_conv2d(x, off, w, b, 1)
            assert rel_err(out, deform_oracle(x, off, w, b)) <= RTOL

    def test_offset_clamping(self, kernels, rng):
        x = rng.standard_normal((1, 6, 6)).astype(np.float32)
        w = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
        b = np.zeros(1, dtype=np.float32)
        off = np.full((18, 6, 6), 50.0, dtype=np.float32)
        out = kernels.deform_conv2d(x, off, w, b, 1)
        assert rel_err(out, deform_oracle(x, off, w, b)) <= RTOL

    def test_wrong_offset_channels(self, kernels, rng):
        x = rng.random((1, 4, 4), dtype=np.float32)
        w = rng.random((1, 1, 3, 3), dtype=np.float32)
        off = np.zeros((4, 4, 4), dtype=np.float32)
        with pytest.raises(ShapeError):
            kernels.deform_conv2d(x, off, w, np.zeros(1, np.float32), 1)


class TestGdn:
    def test_self_normalization_limit(self, kernels):
        x = np.full((1, 2, 2), 3.0, dtype=np.float32)
        beta = np.full(1, 1e-6, dtype=np.float32)
        gamma = np.ones((1, 1), dtype=np.float32)
        out = kernels.gdn(x, beta, gamma, False, 1)
        assert np.allclose(out, 3.0 / np.sqrt(1e-6 + 9.0), rtol=1e-6)

    def test_zero_gamma_divides_by_sqrt_beta(self, kernels, rng):
        x = rng.standard_normal((2, 3, 3)).astype(np.float32)
        beta = np.full(2, 4.0, dtype=np.float32)
        gamma = np.zeros((2, 2), dtype=np.float32)
        out = kernels.gdn(x, beta, gamma, False, 1)
        assert np.array_equal(out, (x.astype(np.float64) / 2.0).astype(np.float32))

    def test_random_vs_formula_oracle(self, kernels, rng):
        x = rng.standard_normal((3, 4, 5)).astype(np.float32)
        beta = (rng.random(3) + 0.1).astype(np.float32)
        gamma = (rng.random((3, 3)) * 0.3).astype(np.float32)
        den = np.sqrt(beta.astype(np.float64)[:, None, None]
                      + np.einsum("ij,jhw->ihw", gamma.astype(np.float64),
                                  x.astype(np.float64) ** 2))
        fwd = kernels.gdn(x, beta, gamma, False, 1)
        inv = kernels.gdn(x, beta, gamma, True, 1)
        assert np.abs(fwd - x / den).max() <= 1e-6
        assert np.abs(inv - x * den).max() <= 1e-6

    def test_magnitude_bound(self, kernels, rng):
        x = (rng.standard_normal((4, 6, 6)) * 100).astype(np.float32)
        beta = np.full(4, 1e-6, dtype=np.float32)
        gamma = rng.random((4, 4)).astype(np.float32)
        out = kernels.gdn(x, beta, gamma, False, 1)
        bound = np.abs(x) / np.sqrt(1e-6) + 1e-3
        assert np.all(np.abs(out) <= bound)


@pytest.mark.skipif(not HAVE_EXT, reason="extension not built")
class TestBackendAgreement:
    """The two backends agree within float tolerance on random cases."""

    def test_conv_kernels_agree(self, rng):
        from licodec import _ckernels, _pykernels
        x = rng.standard_normal((5, 12, 10)).astype(np.float32)
        w = rng.standard_normal((6, 5, 3, 3)).astype(np.float32)
        wd = rng.standard_normal((5, 6, 4, 4)).astype(np.float32)
        b = rng.standard_normal(6).astype(np.float32)
        off = (rng.standard_normal((18, 12, 10))).astype(np.float32)
        beta = (rng.random(5) + 0.2).astype(np.float32)
        gamma = (rng.random((5, 5)) * 0.2).astype(np.float32)
        pairs = [
            (_pykernels.conv2d(x, w, b, 2, 1), _ckernels.conv2d(x, w, b, 2, 1, 1)),
            (_pykernels.deconv2d(x, wd, b, 2, 1), _ckernels.deconv2d(x, wd, b, 2, 1, 1)),
            (_pykernels.deform_conv2d(x, off, w[:, :, :3, :3], b),
             _ckernels.deform_conv2d(x, off, w[:, :, :3, :3], b, 1)),
            (_pykernels.gdn(x, beta, gamma, False), _ckernels.gdn(x, beta, gamma, False, 1)),
        ]
        for a, c in pairs:
            assert rel_err(a.astype(np.float64), c.astype(np.float64)) <= RTOL
