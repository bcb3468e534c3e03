"""NumPy fallback for the hot kernels.

Semantics mirror the compiled extension in ``_ckernels.pyx``: same shapes,
same zero-padding rules, same offset clamping. Floating-point results agree
with the extension only to rounding noise (the extension accumulates per
output element in float64 with a fixed tap order; here convolutions go
through im2col + BLAS). Within one backend all guarantees hold exactly, in
particular deform_conv2d with zero offsets reproduces conv2d bit for bit
because both run through the same matmul on the same gathered columns.

Everything takes and returns C-contiguous float32 arrays shaped (C, H, W).
The ``threads`` argument is accepted for interface parity and ignored.
"""

import numpy as np

from .errors import ShapeError

# keep intermediate column blocks around this many float32 elements
_BLOCK_ELEMS = 4_000_000


def conv2d(x, w, b, stride=1, padding=0, threads=1):
    """Cross-correlation of (C,H,W) with kernels (O,C,kh,kw), zero padding."""
    C, H, W = x.shape
    O, CI, kh, kw = w.shape
    if CI != C:
        raise ShapeError(f"conv2d: input has {C} channels, kernel expects {CI}")
    oh = (H + 2 * padding - kh) // stride + 1
    ow = (W + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d: output would be empty for input {H}x{W}, "
                         f"kernel {kh}x{kw}, stride {stride}, padding {padding}")
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (C, oh, ow, kh, kw), a view
    wm = w.reshape(O, C * kh * kw)
    out = np.empty((O, oh, ow), dtype=np.float32)
    rows = max(1, min(oh, _BLOCK_ELEMS // max(1, C * kh * kw * ow)))
    for r0 in range(0, oh, rows):
        r1 = min(r0 + rows, oh)
        cols = win[:, r0:r1].transpose(0, 3, 4, 1, 2).reshape(C * kh * kw, (r1 - r0) * ow)
        out[:, r0:r1] = (wm @ np.ascontiguousarray(cols)).reshape(O, r1 - r0, ow)
    out += b[:, None, None]
    return out


def deconv2d(x, w, b, stride=1, padding=0, threads=1):
    """Transposed convolution; w is (C_in, O, kh, kw), torch convention.

    Output size is (H-1)*stride - 2*padding + kh. Realized as a stride-1
    convolution of the zero-stuffed input with the flipped kernel, which is
    the gradient-of-conv definition.
    """
    CI, O, kh, kw = w.shape
    C, H, W = x.shape
    if CI != C:
        raise ShapeError(f"deconv2d: input has {C} channels, kernel expects {CI}")
    if padding > kh - 1 or padding > kw - 1:
        raise ShapeError(f"deconv2d: padding {padding} exceeds kernel-1")
    if stride > 1:
        xs = np.zeros((C, (H - 1) * stride + 1, (W - 1) * stride + 1), dtype=np.float32)
        xs[:, ::stride, ::stride] = x
    else:
        xs = x
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d(xs, wf, b, stride=1, padding=kh - 1 - padding)


def deform_conv2d(x, offsets, w, b, threads=1):
    """Deformable convolution, stride 1, padding k//2, bilinear sampling.

    offsets holds 2*k*k channels: (dy, dx) per kernel tap in row-major tap
    order, clamped to +-(k+1) pixels. Samples outside the input read 0. With
    all-zero offsets this routine gathers exactly the conv2d columns and runs
    the identical matmul, so it equals conv2d bitwise.
    """
    O, C, kh, kw = w.shape
    if kh != kw:
        raise ShapeError("deform_conv2d: only square kernels supported")
    k = kh
    CH, H, W = x.shape
    if CH != C:
        raise ShapeError(f"deform_conv2d: input has {CH} channels, kernel expects {C}")
    if offsets.shape != (2 * k * k, H, W):
        raise ShapeError(f"deform_conv2d: offsets must be ({2 * k * k},{H},{W}), "
                         f"got {offsets.shape}")
    pad = k // 2
    lim = np.float32(k + 1)
    off = np.clip(offsets, -lim, lim)

    ii = np.arange(H, dtype=np.float32)[:, None]
    jj = np.arange(W, dtype=np.float32)[None, :]
    wm = w.reshape(O, C * k * k)
    out = np.empty((O, H, W), dtype=np.float32)
    rows = max(1, min(H, _BLOCK_ELEMS // max(1, C * k * k * W)))
    for r0 in range(0, H, rows):
        r1 = min(r0 + rows, H)
        cols = np.empty((C, k * k, r1 - r0, W), dtype=np.float32)
        for t in range(k * k):
            ky, kx = divmod(t, k)
            py = (ii[r0:r1] - pad + ky) + off[2 * t, r0:r1]
            px = (jj - pad + kx) + off[2 * t + 1, r0:r1]
            y0 = np.floor(py)
            x0 = np.floor(px)
            fy = py - y0
            fx = px - x0
            y0 = y0.astype(np.int64)
            x0 = x0.astype(np.int64)
            vs = []
            for dy in (0, 1):
                for dx in (0, 1):
                    yy = y0 + dy
                    xx = x0 + dx
                    ok = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
                    v = x[:, np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)]
                    vs.append(np.where(ok, v, np.float32(0.0)))
            v00, v01, v10, v11 = vs
            one = np.float32(1.0)
            cols[:, t] = ((v00 * (one - fy) + v10 * fy) * (one - fx)
                          + (v01 * (one - fy) + v11 * fy) * fx)
        out[:, r0:r1] = (wm @ cols.reshape(C * k * k, (r1 - r0) * W)).reshape(O, r1 - r0, W)
    out += b[:, None, None]
    return out


def gdn(x, beta, gamma, inverse=False, threads=1):
    """Generalized divisive normalization: x_i / sqrt(beta_i + sum_j g_ij x_j^2).

    ``inverse=True`` multiplies by the sqrt term instead (IGDN).
    """
    C = x.shape[0]
    if beta.shape != (C,) or gamma.shape != (C, C):
        raise ShapeError(f"gdn: parameter shapes {beta.shape}/{gamma.shape} "
                         f"do not match {C} channels")
    x64 = x.astype(np.float64)
    sq = x64 * x64
    norm = np.tensordot(gamma.astype(np.float64), sq, axes=1)
    norm += beta.astype(np.float64)[:, None, None]
    root = np.sqrt(norm)
    y = x64 * root if inverse else x64 / root
    return y.astype(np.float32)


# ---------------------------------------------------------------------------
# Range coder (LZMA-style: 64-bit low, 32-bit range, byte renormalization).
# Integer-only; byte output is identical to the compiled version.

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


def rc_encode(syms, flat, starts, lens):
    """Encode syms[i] under the CDF table flat[starts[i] : starts[i]+lens[i]].

    Each table is cumulative: t[0]=0 ... t[S]=2^P; symbol s occupies
    [t[s], t[s+1]). Returns the byte string with trailing zero bytes trimmed
    (the decoder treats reads past the end as zeros).
    """
    low = 0
    rng = _MASK32
    cache = 0
    pending = 0
    first = True
    out = bytearray()

    def shift_low():
        nonlocal low, cache, pending, first
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            if first:
                first = False
            else:
                out.append((cache + carry) & 0xFF)
            while pending:
                out.append((0xFF + carry) & 0xFF)
                pending -= 1
            cache = (low >> 24) & 0xFF
        else:
            pending += 1
        low = (low << 8) & _MASK32

    n = len(syms)
    for i in range(n):
        st = int(starts[i])
        ln = int(lens[i])
        s = int(syms[i])
        if s < 0 or s >= ln - 1:
            raise ValueError(f"symbol {s} out of CDF support at index {i}")
        total = int(flat[st + ln - 1])
        cum = int(flat[st + s])
        freq = int(flat[st + s + 1]) - cum
        if freq <= 0:
            raise ValueError(f"zero-mass symbol {s} in CDF at index {i}")
        r = rng // total
        low += r * cum
        rng = r * freq
        while rng < _TOP:
            shift_low()
            rng = (rng << 8) & _MASK32
    for _ in range(5):
        shift_low()
    while out and out[-1] == 0:
        out.pop()
    return bytes(out)


def rc_decode(data, flat, starts, lens):
    """Decode len(starts) symbols; reads past the end of data yield zeros."""
    data = bytes(data)
    n = len(starts)
    syms = np.empty(n, dtype=np.int32)
    pos = 0
    m = len(data)
    code = 0
    for _ in range(4):
        code = (code << 8) | (data[pos] if pos < m else 0)
        pos += 1
    rng = _MASK32
    for i in range(n):
        st = int(starts[i])
        ln = int(lens[i])
        total = int(flat[st + ln - 1])
        r = rng // total
        v = code // r
        if v >= total:
            v = total - 1
        # find s with t[s] <= v < t[s+1]
        lo_i, hi_i = 0, ln - 1
        while hi_i - lo_i > 1:
            mid = (lo_i + hi_i) >> 1
            if int(flat[st + mid]) <= v:
                lo_i = mid
            else:
                hi_i = mid
        s = lo_i
        cum = int(flat[st + s])
        freq = int(flat[st + s + 1]) - cum
        if freq <= 0:
            raise ValueError(f"zero-mass symbol {s} in CDF at index {i}")
        code -= cum * r
        rng = r * freq
        while rng < _TOP:
            code = ((code << 8) | (data[pos] if pos < m else 0)) & 0xFFFFFFFFFF
            pos += 1
            rng = (rng << 8) & _MASK32
        syms[i] = s
    return syms
