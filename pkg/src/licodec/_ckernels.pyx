# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: convolutions, GDN and the range coder.

Per-output-element accumulation runs in float64 with a fixed (c_in, ky, kx)
tap order, so results are bit-stable across runs and thread counts; threading
(OpenMP) only distributes independent output elements. The range coder is
integer-only and byte-identical to the fallback in ``_pykernels``.
"""

import numpy as np

from cython.parallel cimport prange
from libc.math cimport floor, sqrt
from libc.stdint cimport int32_t, int64_t, uint8_t, uint32_t, uint64_t

from .errors import ShapeError


def conv2d(const float[:, :, ::1] x, const float[:, :, :, ::1] w,
           const float[::1] b, int stride=1, int padding=0, int threads=1):
    cdef int C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef int O = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    if w.shape[1] != C:
        raise ShapeError(f"conv2d: input has {C} channels, kernel expects {w.shape[1]}")
    cdef int oh = (H + 2 * padding - kh) // stride + 1
    cdef int ow = (W + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d: output would be empty for input {H}x{W}, "
                         f"kernel {kh}x{kw}, stride {stride}, padding {padding}")
    out_np = np.empty((O, oh, ow), dtype=np.float32)
    cdef float[:, :, ::1] out = out_np
    cdef int nt = threads if threads > 0 else 1
    cdef int o, i, j, ci, ky, kx, yy, xx, iy0, ix0
    cdef double acc
    for o in prange(O, nogil=True, num_threads=nt, schedule='static'):
        for i in range(oh):
            iy0 = i * stride - padding
            for j in range(ow):
                ix0 = j * stride - padding
                acc = <double> b[o]
                for ci in range(C):
                    for ky in range(kh):
                        yy = iy0 + ky
                        if yy < 0 or yy >= H:
                            continue
                        for kx in range(kw):
                            xx = ix0 + kx
                            if xx < 0 or xx >= W:
                                continue
                            acc = acc + (<double> w[o, ci, ky, kx]) * (<double> x[ci, yy, xx])
                out[o, i, j] = <float> acc
    return out_np


def deconv2d(const float[:, :, ::1] x, const float[:, :, :, ::1] w,
             const float[::1] b, int stride=1, int padding=0, int threads=1):
    """Transposed conv as a stride-1 conv of the zero-stuffed input with the
    flipped kernel (the gradient-of-conv definition)."""
    cdef int C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef int kh = w.shape[2], kw = w.shape[3]
    if w.shape[0] != C:
        raise ShapeError(f"deconv2d: input has {C} channels, kernel expects {w.shape[0]}")
    if padding > kh - 1 or padding > kw - 1:
        raise ShapeError(f"deconv2d: padding {padding} exceeds kernel-1")
    if stride > 1:
        xs = np.zeros((C, (H - 1) * stride + 1, (W - 1) * stride + 1),
                      dtype=np.float32)
        xs[:, ::stride, ::stride] = np.asarray(x)
    else:
        xs = np.asarray(x)
    wf = np.ascontiguousarray(np.asarray(w)[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d(xs, wf, b, 1, kh - 1 - padding, threads)


def deform_conv2d(const float[:, :, ::1] x, const float[:, :, ::1] offsets,
                  const float[:, :, :, ::1] w, const float[::1] b, int threads=1):
    cdef int O = w.shape[0], C = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    if kh != kw:
        raise ShapeError("deform_conv2d: only square kernels supported")
    cdef int k = kh
    cdef int H = x.shape[1], W = x.shape[2]
    if x.shape[0] != C:
        raise ShapeError(f"deform_conv2d: input has {x.shape[0]} channels, kernel expects {C}")
    if offsets.shape[0] != 2 * k * k or offsets.shape[1] != H or offsets.shape[2] != W:
        raise ShapeError(f"deform_conv2d: offsets must be ({2 * k * k},{H},{W}), "
                         f"got ({offsets.shape[0]},{offsets.shape[1]},{offsets.shape[2]})")
    cdef int pad = k // 2
    cdef double lim = <double> (k + 1)
    out_np = np.empty((O, H, W), dtype=np.float32)
    cdef float[:, :, ::1] out = out_np
    cdef int nt = threads if threads > 0 else 1
    cdef int o, i, j, ci, ky, kx, t, y0, x0
    cdef double acc, dy, dx, py, px, fy, fx, v00, v01, v10, v11, vy0, vy1
    for o in prange(O, nogil=True, num_threads=nt, schedule='static'):
        for i in range(H):
            for j in range(W):
                acc = <double> b[o]
                for ci in range(C):
                    for ky in range(k):
                        for kx in range(k):
                            t = ky * k + kx
                            dy = <double> offsets[2 * t, i, j]
                            dx = <double> offsets[2 * t + 1, i, j]
                            if dy < -lim:
                                dy = -lim
                            elif dy > lim:
                                dy = lim
                            if dx < -lim:
                                dx = -lim
                            elif dx > lim:
                                dx = lim
                            py = (<double> (i - pad + ky)) + dy
                            px = (<double> (j - pad + kx)) + dx
                            y0 = <int> floor(py)
                            x0 = <int> floor(px)
                            fy = py - floor(py)
                            fx = px - floor(px)
                            v00 = (<double> x[ci, y0, x0]) if 0 <= y0 < H and 0 <= x0 < W else 0.0
                            v01 = (<double> x[ci, y0, x0 + 1]) if 0 <= y0 < H and 0 <= x0 + 1 < W else 0.0
                            v10 = (<double> x[ci, y0 + 1, x0]) if 0 <= y0 + 1 < H and 0 <= x0 < W else 0.0
                            v11 = (<double> x[ci, y0 + 1, x0 + 1]) if 0 <= y0 + 1 < H and 0 <= x0 + 1 < W else 0.0
                            vy0 = v00 * (1.0 - fy) + v10 * fy
                            vy1 = v01 * (1.0 - fy) + v11 * fy
                            acc = acc + (<double> w[o, ci, ky, kx]) * (vy0 * (1.0 - fx) + vy1 * fx)
                out[o, i, j] = <float> acc
    return out_np


def gdn(const float[:, :, ::1] x, const float[::1] beta, const float[:, ::1] gamma,
        bint inverse=False, int threads=1):
    cdef int C = x.shape[0], H = x.shape[1], W = x.shape[2]
    if beta.shape[0] != C or gamma.shape[0] != C or gamma.shape[1] != C:
        raise ShapeError(f"gdn: parameter shapes do not match {C} channels")
    out_np = np.empty((C, H, W), dtype=np.float32)
    cdef float[:, :, ::1] out = out_np
    cdef int nt = threads if threads > 0 else 1
    cdef int ci, cj, i, j
    cdef double acc, t, root
    for ci in prange(C, nogil=True, num_threads=nt, schedule='static'):
        for i in range(H):
            for j in range(W):
                acc = <double> beta[ci]
                for cj in range(C):
                    t = <double> x[cj, i, j]
                    acc = acc + (<double> gamma[ci, cj]) * (t * t)
                root = sqrt(acc)
                if inverse:
                    out[ci, i, j] = <float> ((<double> x[ci, i, j]) * root)
                else:
                    out[ci, i, j] = <float> ((<double> x[ci, i, j]) / root)
    return out_np


# ---------------------------------------------------------------------------
# Range coder: byte-identical twin of the pure-Python implementation.

cdef uint32_t RC_TOP = 1 << 24
cdef uint64_t LOW_THRESH = 0xFF000000
cdef uint64_t MASK32 = 0xFFFFFFFF
cdef uint64_t MASK40 = 0xFFFFFFFFFF


def rc_encode(const int32_t[::1] syms, const uint32_t[::1] flat,
              const int64_t[::1] starts, const int32_t[::1] lens):
    cdef Py_ssize_t n = syms.shape[0]
    # 16 bits/symbol ceiling plus renorm and flush slack
    cdef Py_ssize_t cap = 3 * n + 64
    buf_np = np.zeros(cap, dtype=np.uint8)
    cdef uint8_t[::1] buf = buf_np
    cdef Py_ssize_t pos = 0
    cdef uint64_t low = 0
    cdef uint32_t rng = 0xFFFFFFFF
    cdef uint32_t cache = 0, carry
    cdef uint64_t pending = 0
    cdef bint first = True
    cdef Py_ssize_t i
    cdef int64_t st
    cdef int32_t ln, s
    cdef uint32_t total, cum, freq, r
    cdef int sh
    cdef int bad = -1
    with nogil:
        for i in range(n):
            st = starts[i]
            ln = lens[i]
            s = syms[i]
            if s < 0 or s >= ln - 1:
                bad = <int> i
                break
            total = flat[st + ln - 1]
            cum = flat[st + s]
            freq = flat[st + s + 1] - cum
            if freq == 0:
                bad = <int> i
                break
            r = rng / total
            low = low + (<uint64_t> r) * cum
            rng = r * freq
            while rng < RC_TOP:
                # shift_low()
                if low < LOW_THRESH or low > MASK32:
                    carry = <uint32_t> (low >> 32)
                    if first:
                        first = False
                    else:
                        buf[pos] = <uint8_t> ((cache + carry) & 0xFF)
                        pos = pos + 1
                    while pending > 0:
                        buf[pos] = <uint8_t> ((0xFF + carry) & 0xFF)
                        pos = pos + 1
                        pending = pending - 1
                    cache = <uint32_t> ((low >> 24) & 0xFF)
                else:
                    pending = pending + 1
                low = (low << 8) & MASK32
                rng = rng << 8
        if bad < 0:
            for sh in range(5):
                if low < LOW_THRESH or low > MASK32:
                    carry = <uint32_t> (low >> 32)
                    if first:
                        first = False
                    else:
                        buf[pos] = <uint8_t> ((cache + carry) & 0xFF)
                        pos = pos + 1
                    while pending > 0:
                        buf[pos] = <uint8_t> ((0xFF + carry) & 0xFF)
                        pos = pos + 1
                        pending = pending - 1
                    cache = <uint32_t> ((low >> 24) & 0xFF)
                else:
                    pending = pending + 1
                low = (low << 8) & MASK32
            while pos > 0 and buf[pos - 1] == 0:
                pos = pos - 1
    if bad >= 0:
        raise ValueError(f"symbol {syms[bad]} invalid for CDF at index {bad}")
    return bytes(buf_np[:pos].tobytes())


def rc_decode(const uint8_t[::1] data, const uint32_t[::1] flat,
              const int64_t[::1] starts, const int32_t[::1] lens):
    cdef Py_ssize_t n = starts.shape[0]
    syms_np = np.empty(n, dtype=np.int32)
    cdef int32_t[::1] syms = syms_np
    cdef Py_ssize_t m = data.shape[0]
    cdef Py_ssize_t pos = 0
    cdef uint64_t code = 0
    cdef uint32_t rng = 0xFFFFFFFF
    cdef int q
    cdef Py_ssize_t i
    cdef int64_t st
    cdef int32_t ln, lo_i, hi_i, mid, s
    cdef uint32_t total, cum, freq, r, v
    cdef int bad = -1
    with nogil:
        for q in range(4):
            code = (code << 8) | (data[pos] if pos < m else 0)
            pos = pos + 1
        for i in range(n):
            st = starts[i]
            ln = lens[i]
            total = flat[st + ln - 1]
            r = rng / total
            v = <uint32_t> (code / r)
            if v >= total:
                v = total - 1
            lo_i = 0
            hi_i = ln - 1
            while hi_i - lo_i > 1:
                mid = (lo_i + hi_i) >> 1
                if flat[st + mid] <= v:
                    lo_i = mid
                else:
                    hi_i = mid
            s = lo_i
            cum = flat[st + s]
            freq = flat[st + s + 1] - cum
            if freq == 0:
                bad = <int> i
                break
            code = code - (<uint64_t> cum) * r
            rng = r * freq
            while rng < RC_TOP:
                code = ((code << 8) | (data[pos] if pos < m else 0)) & MASK40
                pos = pos + 1
                rng = rng << 8
            syms[i] = s
    if bad >= 0:
        raise ValueError(f"zero-mass symbol in CDF at index {bad}")
    return syms_np
