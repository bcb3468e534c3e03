"""Versioned .lic bitstream container.

Layout (all integers little-endian, normative and bit-exact):

  magic "LIC1" | u8 version=1 | u8 cfg | u8 parity | u8 stream count S
  u16 N | u16 C_y | u16 C_z
  u32 true width | u32 true height | u32 padded width | u32 padded height
  channel bitmap, ceil(C_y/8) bytes, bit c = byte c//8 bit c%8 (LSB first)
  per present channel, ascending: i32 lo | i32 hi   (symbol bounds)
  u32 segment lengths x (1 + S + S): hyper, anchors 0..S-1, non-anchors 0..S-1
  segment bytes in the same order

parity 0 means cells with even (row+col) are anchors; it is the only value
currently written and accepted.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BitstreamError

MAGIC = b"LIC1"
VERSION = 1
PARITY_EVEN_ANCHOR = 0


@dataclass
class ContainerHeader:
    version: int
    cfg: int
    parity: int
    streams: int
    n: int
    c_y: int
    c_z: int
    true_w: int
    true_h: int
    padded_w: int
    padded_h: int


@dataclass
class BitstreamContainer:
    header: ContainerHeader
    bitmap: np.ndarray            # (C_y,) bool
    bounds: list                  # [(lo, hi)] per present channel, ascending
    z_segment: bytes
    anchor_segments: list
    nonanchor_segments: list

    @property
    def present_channels(self):
        return [c for c in range(self.header.c_y) if self.bitmap[c]]


def split_channels(present, streams):
    """Partition the present-channel list into ``streams`` contiguous blocks
    (earlier blocks take the remainder). Blocks may be empty."""
    n = len(present)
    base, rem = divmod(n, streams)
    blocks = []
    pos = 0
    for s in range(streams):
        size = base + (1 if s < rem else 0)
        blocks.append(present[pos:pos + size])
        pos += size
    return blocks


def latent_dims(padded_w, padded_h):
    """(h, w) of the core latent and of the hyper latent."""
    return (padded_h // 16, padded_w // 16), (padded_h // 64, padded_w // 64)


def anchor_count(h, w):
    return (h * w + 1) // 2


def write_container(container: BitstreamContainer) -> bytes:
    h = container.header
    if h.streams < 1 or h.streams > 255:
        raise BitstreamError(f"stream count {h.streams} out of range")
    present = container.present_channels
    if len(container.bounds) != len(present):
        raise BitstreamError(f"bitmap has {len(present)} set bits but "
                             f"{len(container.bounds)} bound records")
    if len(container.anchor_segments) != h.streams or \
            len(container.nonanchor_segments) != h.streams:
        raise BitstreamError("segment list length does not match stream count")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<BBBBHHH", h.version, h.cfg, h.parity, h.streams,
                       h.n, h.c_y, h.c_z)
    out += struct.pack("<IIII", h.true_w, h.true_h, h.padded_w, h.padded_h)
    bits = np.asarray(container.bitmap, dtype=bool)
    if bits.shape != (h.c_y,):
        raise BitstreamError(f"bitmap must have {h.c_y} bits")
    out += np.packbits(bits, bitorder="little").tobytes()
    for lo, hi in container.bounds:
        out += struct.pack("<ii", int(lo), int(hi))
    segments = [container.z_segment] + list(container.anchor_segments) \
        + list(container.nonanchor_segments)
    for seg in segments:
        out += struct.pack("<I", len(seg))
    for seg in segments:
        out += seg
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise BitstreamError(f"container truncated while reading {what}")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_container(data: bytes) -> BitstreamContainer:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BitstreamError(f"not a LIC bitstream: bad magic {magic!r}")
    version, cfg, parity, streams, n, c_y, c_z = r.unpack("<BBBBHHH", "header")
    if version > VERSION:
        raise BitstreamError(f"unsupported container version {version}")
    if parity != PARITY_EVEN_ANCHOR:
        raise BitstreamError(f"unknown anchor parity convention {parity}")
    if streams < 1:
        raise BitstreamError("stream count must be at least 1")
    tw, th, pw, ph = r.unpack("<IIII", "dimensions")
    if pw % 64 or ph % 64 or pw == 0 or ph == 0:
        raise BitstreamError(f"padded dimensions {pw}x{ph} not multiples of 64")
    if tw > pw or th > ph or tw == 0 or th == 0:
        raise BitstreamError(f"true dimensions {tw}x{th} inconsistent with "
                             f"padded {pw}x{ph}")
    nbytes = (c_y + 7) // 8
    bitmap = np.unpackbits(
        np.frombuffer(r.take(nbytes, "channel bitmap"), dtype=np.uint8),
        bitorder="little")[:c_y].astype(bool)
    bounds = []
    for _ in range(int(bitmap.sum())):
        lo, hi = r.unpack("<ii", "channel bounds")
        if hi < lo:
            raise BitstreamError(f"invalid channel bounds [{lo}, {hi}]")
        bounds.append((lo, hi))
    nseg = 1 + 2 * streams
    lengths = [r.unpack("<I", "segment length")[0] for _ in range(nseg)]
    if r.pos + sum(lengths) != len(data):
        raise BitstreamError(
            f"declared segment lengths sum to {sum(lengths)} bytes but "
            f"{len(data) - r.pos} remain")
    segs = []
    for i, ln in enumerate(lengths):
        segs.append(bytes(r.take(ln, f"segment {i}")))
    header = ContainerHeader(version=version, cfg=cfg, parity=parity,
                             streams=streams, n=n, c_y=c_y, c_z=c_z,
                             true_w=tw, true_h=th, padded_w=pw, padded_h=ph)
    return BitstreamContainer(header=header, bitmap=bitmap, bounds=bounds,
                              z_segment=segs[0],
                              anchor_segments=segs[1:1 + streams],
                              nonanchor_segments=segs[1 + streams:])


def inspect(data: bytes) -> str:
    """Human-readable container summary."""
    c = parse_container(data)
    h = c.header
    (hy, wy), (hz, wz) = latent_dims(h.padded_w, h.padded_h)
    present = c.present_channels
    blocks = split_channels(present, h.streams)
    n_anchor = anchor_count(hy, wy)
    n_non = hy * wy - n_anchor
    lines = [
        f"LIC bitstream v{h.version}",
        f"image: {h.true_w}x{h.true_h} (coded {h.padded_w}x{h.padded_h}), cfg {h.cfg}",
        f"latent: {h.c_y}x{hy}x{wy}, hyper: {h.c_z}x{hz}x{wz}, N={h.n}",
        f"channels: {len(present)} present, {h.c_y - len(present)} skipped "
        f"of {h.c_y}",
        f"streams: {h.streams}, anchor parity: {h.parity}",
        f"segment hyper: {len(c.z_segment)} bytes, {h.c_z * hz * wz} symbols",
    ]
    for s, blk in enumerate(blocks):
        lines.append(f"segment anchor[{s}]: {len(c.anchor_segments[s])} bytes, "
                     f"{len(blk) * n_anchor} symbols")
    for s, blk in enumerate(blocks):
        lines.append(f"segment non-anchor[{s}]: {len(c.nonanchor_segments[s])} bytes, "
                     f"{len(blk) * n_non} symbols")
    total_syms = len(present) * hy * wy
    bpp = 8.0 * len(data) / (h.true_w * h.true_h)
    lines.append(f"latent symbols: {total_syms}")
    lines.append(f"size: {len(data)} bytes, bpp: {bpp:.4f}")
    return "\n".join(lines)
