"""Command-line interface.

Subcommands: encode, decode, roundtrip, bench, metrics, eval-loss,
gen-fixture, inspect. Every failure exits non-zero after printing a single
machine-parseable line ``error: <CLASS>: <message>`` on stderr. The default
thread count comes from the LIC_THREADS environment variable.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, backend
from .checkerboard import decode_bench, decode_image, encode_image
from .container import inspect as inspect_container
from .errors import (BitstreamError, ImageError, LicError, ModelFormatError,
                     ModelMismatchError, ShapeError)
from .imageio import load_image, save_image
from .metrics import LossConfig, metrics_report, psnr, teacher_loss
from .models import gen_fixture, load_model, save_model


def _error_class(exc):
    if isinstance(exc, ModelMismatchError):
        return "MODEL_MISMATCH"
    if isinstance(exc, ModelFormatError):
        return "BAD_MODEL"
    if isinstance(exc, BitstreamError):
        return "BAD_BITSTREAM"
    if isinstance(exc, ImageError):
        return "BAD_IMAGE"
    if isinstance(exc, ShapeError):
        return "SHAPE_MISMATCH"
    if isinstance(exc, FileNotFoundError):
        return "FILE_NOT_FOUND"
    if isinstance(exc, (OSError, IOError)):
        return "IO_ERROR"
    if isinstance(exc, (ValueError, LicError)):
        return "INVALID_ARGUMENT"
    return "INTERNAL"


def _default_threads():
    try:
        return max(1, int(os.environ.get("LIC_THREADS", "1")))
    except ValueError:
        return 1


def _print_timings(prefix, timings):
    for k, v in timings.items():
        print(f"{prefix}.{k}_ms={1000.0 * v:.3f}")


def cmd_encode(args):
    model = load_model(args.model)
    x = load_image(args.input)
    res = encode_image(x, model, threads=args.threads, streams=args.streams,
                       skip_zero_channels=not args.no_skip)
    with open(args.output, "wb") as f:
        f.write(res.data)
    pixels = x.shape[1] * x.shape[2]
    print(f"bpp={8.0 * len(res.data) / pixels:.4f}")
    print(f"bytes={len(res.data)}")
    _print_timings("encode", res.timings)
    return 0


def cmd_decode(args):
    model = load_model(args.model)
    with open(args.input, "rb") as f:
        data = f.read()
    res = decode_image(data, model, threads=args.threads, mode=args.mode)
    save_image(args.output, res.x_hat)
    _print_timings("decode", res.timings)
    return 0


def cmd_roundtrip(args):
    model = load_model(args.model)
    x = load_image(args.input)
    enc = encode_image(x, model, threads=args.threads, streams=args.streams)
    dec = decode_image(enc.data, model, threads=args.threads)
    for stage, a, b in (("latent", enc.y_hat, dec.y_hat),
                        ("hyper-latent", enc.z_hat, dec.z_hat)):
        if not np.array_equal(a, b):
            print(f"FAIL stage={stage}")
            return 1
    print(f"PASS bytes={len(enc.data)} psnr_db={psnr(x, dec.x_hat):.2f}")
    return 0


def cmd_bench(args):
    model = load_model(args.model)
    x = load_image(args.input)
    enc_t = []
    data = None
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        res = encode_image(x, model, threads=args.threads, streams=args.streams)
        enc_t.append(time.perf_counter() - t0)
        data = res.data
    print(f"backend={backend.BACKEND}")
    print(f"encode_ms={1000.0 * float(np.median(enc_t)):.3f}")
    report = decode_bench(data, model, mode=args.mode, threads=args.threads,
                          repeats=args.repeat, verify=not args.no_verify)
    for k, v in report.items():
        print(f"decode.{k}_ms={1000.0 * v:.3f}")
    return 0


def cmd_metrics(args):
    ref = load_image(args.ref)
    test = load_image(args.test)
    rep = metrics_report(ref, test)
    print(f"psnr_db={rep['psnr_db']:.4f}")
    print(f"ms_ssim={rep['ms_ssim']:.6f}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rep, f, indent=2)
    return 0


def cmd_eval_loss(args):
    model = load_model(args.model)
    x = load_image(args.input)
    enc = encode_image(x, model, threads=args.threads)
    dec = decode_image(enc.data, model, threads=args.threads)
    cfg = LossConfig(lambda1=args.lambda1, lambda2=args.lambda2,
                     lambda3=args.lambda3, distortion=args.distortion)
    bits = enc.bits_estimate
    report = teacher_loss(x, dec.x_hat, bits["anchor"] + bits["nonanchor"],
                          bits["z"], enc.y_hat, cfg)
    # single-model run: the student is the teacher, so the KD term stays zero
    for line in report.lines():
        print(line)
    if args.json:
        with open(args.json, "w") as f:
            f.write(report.to_json())
    return 0


def cmd_gen_fixture(args):
    model = gen_fixture(args.seed, cfg=args.cfg, n=args.N, c_y=args.cy,
                        c_z=args.cz)
    size = save_model(model, args.out)
    info = model.info()
    print(f"written={args.out} bytes={size}")
    print(f"params_total={info['params']['total']}")
    return 0


def cmd_inspect(args):
    with open(args.input, "rb") as f:
        data = f.read()
    print(inspect_container(data))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="licodec",
                                description="checkerboard learned-image-codec runtime")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    thr = dict(type=int, default=_default_threads(),
               help="worker threads (default: LIC_THREADS or 1)")

    s = sub.add_parser("encode", help="compress an image to a .lic bitstream")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True, help="8-bit PNG or PPM image")
    s.add_argument("--output", required=True)
    s.add_argument("--threads", **thr)
    s.add_argument("--streams", type=int, default=1,
                   help="independently decodable segments per pass")
    s.add_argument("--no-skip", action="store_true",
                   help="code all-zero channels instead of skipping them")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help="decompress a .lic bitstream")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--threads", **thr)
    s.add_argument("--streams", type=int, default=0,
                   help="decode parallelism hint (segments come from the header)")
    s.add_argument("--mode", choices=["twopass", "serial"], default="twopass")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("roundtrip", help="encode+decode and verify latents match")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--threads", **thr)
    s.add_argument("--streams", type=int, default=1)
    s.set_defaults(func=cmd_roundtrip)

    s = sub.add_parser("bench", help="median per-stage encode/decode timings")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--repeat", type=int, default=3)
    s.add_argument("--threads", **thr)
    s.add_argument("--streams", type=int, default=1)
    s.add_argument("--mode", choices=["twopass", "serial"], default="twopass")
    s.add_argument("--no-verify", action="store_true",
                   help="skip the serial/two-pass equivalence check")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("metrics", help="PSNR and MS-SSIM between two images")
    s.add_argument("--ref", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--json", help="also write a JSON report here")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("eval-loss", help="forward rate-distortion loss report")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--lambda1", type=float, default=0.0016)
    s.add_argument("--lambda2", type=float, default=0.0)
    s.add_argument("--lambda3", type=float, default=0.0)
    s.add_argument("--distortion", choices=["mse", "ms-ssim"], default="mse")
    s.add_argument("--threads", **thr)
    s.add_argument("--json", help="also write a JSON report here")
    s.set_defaults(func=cmd_eval_loss)

    s = sub.add_parser("gen-fixture", help="write a seeded fixture model")
    s.add_argument("--cfg", type=int, choices=[1, 2, 3, 4], default=1)
    s.add_argument("--N", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cy", type=int, default=None, help="latent channels (default N)")
    s.add_argument("--cz", type=int, default=None, help="hyper channels (default N/2)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_fixture)

    s = sub.add_parser("inspect", help="summarize a .lic bitstream")
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single parseable error line, nonzero exit
        print(f"error: {_error_class(exc)}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
