"""Benchmark of the compiled kernels against the NumPy fallback.

Run as ``python -m licodec.bench_backends``. Times each hot kernel on both
backends, checks that outputs agree (bitwise for the integer range coder,
to small relative error for the float kernels) and prints one line per
kernel. Without the compiled extension only the fallback column is filled.
"""

import argparse
import time

import numpy as np

from . import _pykernels
from .backend import HAVE_EXT
from .distributions import build_quantized_cdf

if HAVE_EXT:
    from . import _ckernels


def _time(fn, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _report(name, py_t, ext_t, agree):
    if ext_t is None:
        print(f"{name:<14} python {1000 * py_t:9.2f} ms   cython      -        -")
        return
    speedup = py_t / ext_t if ext_t > 0 else float("inf")
    print(f"{name:<14} python {1000 * py_t:9.2f} ms   cython {1000 * ext_t:9.2f} ms"
          f"   x{speedup:5.1f}   {agree}")


def _rel_close(a, b, tol=1e-5):
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-9)
    return "ok" if np.abs(a - b).max() <= tol * scale else "DISAGREE"


def run(size=96, channels=64, symbols=200_000, threads=1, repeats=3):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((channels, size, size)).astype(np.float32)
    w = (rng.standard_normal((channels, channels, 3, 3)) * 0.05).astype(np.float32)
    wd = (rng.standard_normal((channels, channels, 4, 4)) * 0.05).astype(np.float32)
    b = np.zeros(channels, dtype=np.float32)
    off = (rng.standard_normal((18, size, size)) * 0.7).astype(np.float32)
    beta = np.ones(channels, dtype=np.float32)
    gamma = (0.1 * np.eye(channels)).astype(np.float32)

    print(f"kernel benchmark: {channels}x{size}x{size} input, threads={threads}, "
          f"extension={'yes' if HAVE_EXT else 'no'}")

    cases = [
        ("conv2d 3x3/s2", lambda k: k.conv2d(x, w, b, 2, 1, threads)),
        ("deconv2d 4x4", lambda k: k.deconv2d(x, wd, b, 2, 1, threads)),
        ("deform_conv2d", lambda k: k.deform_conv2d(x, off, w, b, threads)),
        ("gdn", lambda k: k.gdn(x, beta, gamma, False, threads)),
    ]
    for name, call in cases:
        py_t, py_out = _time(lambda: call(_pykernels), repeats)
        if HAVE_EXT:
            ext_t, ext_out = _time(lambda: call(_ckernels), repeats)
            _report(name, py_t, ext_t, _rel_close(py_out, ext_out))
        else:
            _report(name, py_t, None, "-")

    t = build_quantized_cdf(np.array([0.05, 0.15, 0.3, 0.3, 0.15, 0.05]), -3, 2, 16)
    syms = rng.integers(0, 6, symbols).astype(np.int32)
    flat = np.tile(t.cum, symbols).astype(np.uint32)
    starts = (np.arange(symbols, dtype=np.int64) * len(t.cum))
    lens = np.full(symbols, len(t.cum), dtype=np.int32)
    py_t, py_bytes = _time(lambda: _pykernels.rc_encode(syms, flat, starts, lens), repeats)
    if HAVE_EXT:
        ext_t, ext_bytes = _time(lambda: _ckernels.rc_encode(syms, flat, starts, lens),
                                 repeats)
        _report(f"rc_encode {symbols // 1000}k", py_t, ext_t,
                "ok" if py_bytes == ext_bytes else "DISAGREE")
    else:
        _report(f"rc_encode {symbols // 1000}k", py_t, None, "-")
        ext_bytes = py_bytes
    data = np.frombuffer(ext_bytes, dtype=np.uint8)
    py_t, py_syms = _time(lambda: _pykernels.rc_decode(data, flat, starts, lens), repeats)
    if HAVE_EXT:
        ext_t, ext_syms = _time(lambda: _ckernels.rc_decode(data, flat, starts, lens),
                                repeats)
        _report(f"rc_decode {symbols // 1000}k", py_t, ext_t,
                "ok" if np.array_equal(py_syms, ext_syms) else "DISAGREE")
    else:
        _report(f"rc_decode {symbols // 1000}k", py_t, None, "-")
    print("roundtrip:", "ok" if np.array_equal(py_syms, syms) else "BROKEN")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=96)
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--symbols", type=int, default=200_000)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    run(size=args.size, channels=args.channels, symbols=args.symbols,
        threads=args.threads, repeats=args.repeats)


if __name__ == "__main__":
    main()
