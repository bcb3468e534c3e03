"""Checkerboard context codec: anchor/non-anchor two-pass coding.

Spatial positions with even (row+col) are anchors. Anchors are coded from
hyper-side information alone under a GLLMM (their parameters never read any
latent value); non-anchors are coded under a GMM conditioned on the decoded
anchors through a masked 5x5 context convolution whose taps only reach
anchor-parity cells. Both passes are therefore fully parallel per position,
and the serial reference decoder (one symbol at a time) must reproduce the
two-pass result exactly.

All-zero latent channels are skipped: they contribute no symbols to either
pass and are restored as zeros from the channel bitmap. The hyper-latent is
always fully coded.

Symbol order is normative: channels ascending (present only), raster scan
within each channel, anchors pass then non-anchors pass. With S streams the
present channels are split into S contiguous blocks, one independently
decodable segment per block per pass.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import range_coder
from .container import (BitstreamContainer, ContainerHeader, PARITY_EVEN_ANCHOR,
                        VERSION, anchor_count, latent_dims, parse_container,
                        split_channels, write_container)
from .distributions import (GllmmParams, GmmParams, build_tables, table_bits)
from .errors import BitstreamError, ModelMismatchError, ShapeError
from .layers import masked_context_conv, round_half_away, run_graph
from .models import Model

PRECISION = 16


@dataclass(frozen=True)
class CheckerboardMask:
    anchor: np.ndarray     # (H, W) bool, True where (row+col) even
    nonanchor: np.ndarray


def make_masks(h, w) -> CheckerboardMask:
    if h < 1 or w < 1:
        raise ValueError("mask dimensions must be positive")
    par = (np.add.outer(np.arange(h), np.arange(w)) % 2) == 0
    return CheckerboardMask(anchor=par, nonanchor=~par)


def split(y, mask: CheckerboardMask):
    """(anchors-only, non-anchors-only); each keeps y on its parity, 0 elsewhere."""
    if y.shape[1:] != mask.anchor.shape:
        raise ShapeError(f"latent {y.shape} does not match mask {mask.anchor.shape}")
    return y * mask.anchor, y * mask.nonanchor


def merge(y1, y2, mask: CheckerboardMask):
    if y1.shape != y2.shape or y1.shape[1:] != mask.anchor.shape:
        raise ShapeError("merge: shapes disagree")
    return np.where(mask.anchor, y1, y2)


def pad_image(x, multiple=64):
    """Reflection-pad (C,H,W) on the bottom/right to the next multiple."""
    c, h, w = x.shape
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return x
    mode = "reflect" if min(h, w) > 1 else "edge"
    return np.pad(x, ((0, 0), (0, ph), (0, pw)), mode=mode)


@dataclass
class LatentCodingResult:
    data: bytes
    y_hat: np.ndarray
    z_hat: np.ndarray
    bits_estimate: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


@dataclass
class DecodeResult:
    x_hat: np.ndarray
    y_hat: np.ndarray
    z_hat: np.ndarray
    timings: dict = field(default_factory=dict)


def _theta_anchor(model: Model, z_hat, threads):
    """T1 and the GLLMM anchor parameters (depend on the hyper-latent only)."""
    t1 = run_graph(model.graph("hyper_synthesis"), z_hat.astype(np.float32), threads)
    zero = np.zeros((model.c_y,) + t1.shape[1:], dtype=np.float32)
    raw1 = run_graph(model.graph("pen1"), np.concatenate([t1, zero]), threads)
    return t1, GllmmParams.from_raw(raw1, model.c_y)


def _theta_nonanchor(model: Model, t1, y1, threads):
    """Context feature from decoded anchors, then the GMM parameters."""
    t3 = masked_context_conv(y1.astype(np.float32), model.weights, "ctx", threads)
    raw2 = run_graph(model.graph("pen2"), np.concatenate([t1, t3]), threads)
    return GmmParams.from_raw(raw2, model.c_y)


def _pass_arrays(params, y_hat, channels, bounds, mask):
    """Coder arrays (syms, flat, starts, lens) for one pass over ``channels``.

    Raster order within each channel; symbols rebased to their channel's lo.
    """
    sym_parts, flat_parts, lens_parts = [], [], []
    table_rows = []
    for c in channels:
        lo, hi = bounds[c]
        rows = build_tables(params.slice_channel(c, mask), lo, hi, PRECISION)
        syms = y_hat[c][mask].astype(np.int64) - lo
        if syms.min(initial=0) < 0 or syms.max(initial=0) > hi - lo:
            raise BitstreamError(f"channel {c}: symbol outside recorded bounds")
        sym_parts.append(syms.astype(np.int32))
        flat_parts.append(rows.reshape(-1))
        lens_parts.append(np.full(len(syms), rows.shape[1], dtype=np.int32))
        table_rows.append((rows, syms))
    if not sym_parts:
        empty = np.array([], dtype=np.int64)
        return (np.array([], dtype=np.int32), np.array([], dtype=np.uint32),
                empty, np.array([], dtype=np.int32), table_rows)
    syms = np.concatenate(sym_parts)
    flat = np.concatenate(flat_parts)
    lens = np.concatenate(lens_parts)
    starts = np.zeros(len(syms), dtype=np.int64)
    np.cumsum(lens[:-1].astype(np.int64), out=starts[1:])
    return syms, flat, starts, lens, table_rows


def _pass_bits(table_rows):
    return sum(table_bits(rows, syms, PRECISION) for rows, syms in table_rows)


def encode_latents(y_hat, z_hat, model: Model, true_size, threads=1, streams=1,
                   skip_zero_channels=True) -> LatentCodingResult:
    """Entropy-code integer latents into a container.

    true_size is (width, height) of the original image; the padded size is
    implied by the latent grid.
    """
    c_y, hy, wy = y_hat.shape
    if c_y != model.c_y:
        raise ShapeError(f"latent has {c_y} channels, model expects {model.c_y}")
    if z_hat.shape[0] != model.c_z:
        raise ShapeError(f"hyper-latent has {z_hat.shape[0]} channels, "
                         f"model expects {model.c_z}")
    timings = {}
    t0 = time.perf_counter()
    t1, theta1 = _theta_anchor(model, z_hat, threads)
    mask = make_masks(hy, wy)
    y1, _ = split(y_hat, mask)
    theta2 = _theta_nonanchor(model, t1, y1, threads)
    timings["theta"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if skip_zero_channels:
        bitmap = np.array([bool(np.any(y_hat[c])) for c in range(c_y)])
    else:
        bitmap = np.ones(c_y, dtype=bool)
    present = [c for c in range(c_y) if bitmap[c]]
    bounds = {c: (int(y_hat[c].min()), int(y_hat[c].max())) for c in present}

    z_flat, z_starts, z_lens = model.prior.coder_arrays(z_hat.shape)
    z_syms = model.prior.rebase(z_hat).astype(np.int32)
    z_seg = range_coder.encode_raw(z_syms, z_flat, z_starts, z_lens)

    blocks = split_channels(present, streams)
    anchor_segs, nonanchor_segs = [], []
    bits = {"z": model.prior.bits(z_hat), "anchor": 0.0, "nonanchor": 0.0}
    for blk in blocks:
        syms, flat, starts, lens, rows = _pass_arrays(theta1, y_hat, blk, bounds,
                                                      mask.anchor)
        bits["anchor"] += _pass_bits(rows)
        anchor_segs.append(range_coder.encode_raw(syms, flat, starts, lens))
    for blk in blocks:
        syms, flat, starts, lens, rows = _pass_arrays(theta2, y_hat, blk, bounds,
                                                      mask.nonanchor)
        bits["nonanchor"] += _pass_bits(rows)
        nonanchor_segs.append(range_coder.encode_raw(syms, flat, starts, lens))
    timings["entropy_encode"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    tw, th = true_size
    header = ContainerHeader(version=VERSION, cfg=model.cfg,
                             parity=PARITY_EVEN_ANCHOR, streams=streams,
                             n=model.n, c_y=model.c_y, c_z=model.c_z,
                             true_w=tw, true_h=th,
                             padded_w=wy * 16, padded_h=hy * 16)
    data = write_container(BitstreamContainer(
        header=header, bitmap=bitmap, bounds=[bounds[c] for c in present],
        z_segment=z_seg, anchor_segments=anchor_segs,
        nonanchor_segments=nonanchor_segs))
    timings["assemble"] = time.perf_counter() - t0
    return LatentCodingResult(data=data, y_hat=y_hat, z_hat=z_hat,
                              bits_estimate=bits, timings=timings)


def encode_image(x, model: Model, threads=1, streams=1,
                 skip_zero_channels=True) -> LatentCodingResult:
    """Full pipeline: analysis, quantization, hyper path, entropy coding."""
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"expected a (3,H,W) image, got {x.shape}")
    _, th, tw = x.shape
    timings = {}
    t0 = time.perf_counter()
    xp = pad_image(np.ascontiguousarray(x, dtype=np.float32))
    y = run_graph(model.graph("analysis"), xp, threads)
    timings["analysis"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    y_hat = round_half_away(y)
    z = run_graph(model.graph("hyper_analysis"), y, threads)
    z_hat = model.prior.clip(round_half_away(z))
    timings["hyper_analysis"] = time.perf_counter() - t0
    res = encode_latents(y_hat, z_hat, model, (tw, th), threads=threads,
                         streams=streams, skip_zero_channels=skip_zero_channels)
    res.timings = {**timings, **res.timings}
    return res


def _check_model(container, model: Model):
    h = container.header
    if (h.cfg, h.n, h.c_y, h.c_z) != (model.cfg, model.n, model.c_y, model.c_z):
        raise ModelMismatchError(
            f"bitstream was coded with cfg={h.cfg} N={h.n} C_y={h.c_y} "
            f"C_z={h.c_z}; model is cfg={model.cfg} N={model.n} "
            f"C_y={model.c_y} C_z={model.c_z}")


def _decode_pass_segment(seg, params, channels, bounds, mask):
    """Batch-decode one segment into per-channel symbol arrays."""
    sym_counts = [int(mask.sum())] * len(channels)
    flat_parts, lens_parts = [], []
    for c in channels:
        lo, hi = bounds[c]
        rows = build_tables(params.slice_channel(c, mask), lo, hi, PRECISION)
        flat_parts.append(rows.reshape(-1))
        lens_parts.append(np.full(sym_counts[0], rows.shape[1], dtype=np.int32))
    if not channels:
        return []
    flat = np.concatenate(flat_parts)
    lens = np.concatenate(lens_parts)
    starts = np.zeros(len(lens), dtype=np.int64)
    np.cumsum(lens[:-1].astype(np.int64), out=starts[1:])
    decoded = range_coder.decode_raw(seg, flat, starts, lens)
    out = []
    pos = 0
    for i, c in enumerate(channels):
        n = sym_counts[i]
        lo, hi = bounds[c]
        out.append(decoded[pos:pos + n].astype(np.int32) + lo)
        pos += n
    return out


def _decode_pass(segments, blocks, params, bounds, mask, c_y, threads):
    """Decode all segments of one pass (in parallel when threads > 1)."""
    plane = np.zeros((c_y,) + mask.shape, dtype=np.int32)

    def work(args):
        seg, blk = args
        return _decode_pass_segment(seg, params, blk, bounds, mask)

    jobs = list(zip(segments, blocks))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    for blk, chans in zip(blocks, results):
        for c, syms in zip(blk, chans):
            plane[c][mask] = syms
    return plane


def _decode_pass_serial(segments, blocks, params, bounds, mask, c_y):
    """Reference decoder: one symbol at a time through a stepping coder."""
    plane = np.zeros((c_y,) + mask.shape, dtype=np.int32)
    n = int(mask.sum())
    for seg, blk in zip(segments, blocks):
        dec = range_coder.StepDecoder(seg)
        for c in blk:
            lo, hi = bounds[c]
            ch_params = params.slice_channel(c, mask)
            vals = np.zeros(n, dtype=np.int32)
            for i in range(n):
                row = build_tables(ch_params.pick(i), lo, hi, PRECISION)[0]
                vals[i] = dec.step(row) + lo
            plane[c][mask] = vals
    return plane


def decode_latents(data, model: Model, threads=1, mode="twopass"):
    """Container bytes -> (y_hat, z_hat, timings)."""
    if mode not in ("twopass", "serial"):
        raise ValueError(f"unknown decode mode {mode!r}")
    container = parse_container(data)
    _check_model(container, model)
    h = container.header
    (hy, wy), (hz, wz) = latent_dims(h.padded_w, h.padded_h)
    timings = {}

    t0 = time.perf_counter()
    z_flat, z_starts, z_lens = model.prior.coder_arrays((h.c_z, hz, wz))
    raw = range_coder.decode_raw(container.z_segment, z_flat, z_starts, z_lens)
    los = np.array([t.lo for t in model.prior.channels], dtype=np.int32)
    z_hat = (raw.reshape(h.c_z, hz * wz) + los[:, None]).reshape(h.c_z, hz, wz)
    timings["z_decode"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    t1, theta1 = _theta_anchor(model, z_hat, threads)
    timings["theta_anchor"] = time.perf_counter() - t0

    mask = make_masks(hy, wy)
    present = container.present_channels
    bounds = {c: b for c, b in zip(present, container.bounds)}
    blocks = split_channels(present, h.streams)

    t0 = time.perf_counter()
    if mode == "serial":
        y1 = _decode_pass_serial(container.anchor_segments, blocks, theta1,
                                 bounds, mask.anchor, h.c_y)
    else:
        y1 = _decode_pass(container.anchor_segments, blocks, theta1, bounds,
                          mask.anchor, h.c_y, threads)
    timings["anchor_decode"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    theta2 = _theta_nonanchor(model, t1, y1, threads)
    timings["theta_nonanchor"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if mode == "serial":
        y2 = _decode_pass_serial(container.nonanchor_segments, blocks, theta2,
                                 bounds, mask.nonanchor, h.c_y)
    else:
        y2 = _decode_pass(container.nonanchor_segments, blocks, theta2, bounds,
                          mask.nonanchor, h.c_y, threads)
    timings["nonanchor_decode"] = time.perf_counter() - t0

    y_hat = merge(y1, y2, mask).astype(np.int32)
    return y_hat, z_hat, timings


def decode_image(data, model: Model, threads=1, mode="twopass") -> DecodeResult:
    y_hat, z_hat, timings = decode_latents(data, model, threads=threads, mode=mode)
    container = parse_container(data)
    h = container.header
    t0 = time.perf_counter()
    x_hat = run_graph(model.graph("synthesis"), y_hat.astype(np.float32), threads)
    x_hat = np.clip(x_hat, 0.0, 1.0)[:, :h.true_h, :h.true_w]
    timings["synthesis"] = time.perf_counter() - t0
    return DecodeResult(x_hat=x_hat, y_hat=y_hat, z_hat=z_hat, timings=timings)


def decode_bench(data, model: Model, mode="twopass", threads=1, repeats=3,
                 verify=True):
    """Median per-stage decode timings; asserts the two modes agree first."""
    if verify:
        ref, _, _ = decode_latents(data, model, threads=threads, mode="twopass")
        other, _, _ = decode_latents(data, model, threads=threads, mode="serial")
        if not np.array_equal(ref, other):
            raise AssertionError("two-pass and serial decoders disagree")
    stages = {}
    x_hat = None
    for _ in range(repeats):
        res = decode_image(data, model, threads=threads, mode=mode)
        if x_hat is not None and not np.array_equal(res.x_hat, x_hat):
            raise AssertionError("decode not deterministic across repeats")
        x_hat = res.x_hat
        for k, v in res.timings.items():
            stages.setdefault(k, []).append(v)
    report = {k: float(np.median(v)) for k, v in stages.items()}
    report["entropy_decode"] = report.get("anchor_decode", 0.0) \
        + report.get("nonanchor_decode", 0.0)
    report["total"] = sum(v for k, v in report.items()
                          if k not in ("entropy_decode", "total"))
    return report
