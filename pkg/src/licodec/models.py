"""Model bundles: transform graphs, decoder configurations, weight files.

The bundle holds six graphs plus the checkerboard context kernel:

  analysis      image -> latent, four stride-2 stages (x16 downsampling)
  synthesis     latent -> image, mirror of analysis with deconvolutions
  hyper_analysis / hyper_synthesis   latent <-> hyper-latent (x4)
  pen1          hyper features + zero plane -> GLLMM parameters (30*Cy planes)
  pen2          hyper features + context    -> GMM parameters (9*Cy planes)

Decoder configurations: 1 = full synthesis graph; 2 = synthesis without
attention and residual blocks; 3 / 4 = all internal synthesis widths scaled
to ceil(0.75*N) / ceil(0.5*N). Analysis and hyper graphs are identical
across configurations.

The ``.licm`` file layout (all little-endian):
  magic "LICM", u8 version=1, u8 cfg, u16 N, u16 C_y, u16 C_z, u32 tensor
  count; per tensor: u16 name length, name bytes, u8 rank, u32 dims, raw
  float32 data; then the hyper-prior CDF block: u16 channel count, per
  channel i32 lo, i32 hi, u8 precision, (hi-lo+2) u32 cumulative values.
"""

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .distributions import FactorizedPrior, QuantizedCdf, build_quantized_cdf, logistic_cdf
from .errors import ModelFormatError, ShapeError
from .layers import LayerSpec, ModelGraph, clamp_gdn_params

MAGIC = b"LICM"
VERSION = 1
ROLES = ("analysis", "synthesis", "hyper_analysis", "hyper_synthesis", "pen1", "pen2")


def _conv(name, ci, co, k, s, act=False):
    return LayerSpec("conv", ci, co, kernel=k, stride=s, act=act, name=name)


def _deconv(name, ci, co, k, s, act=False):
    return LayerSpec("deconv", ci, co, kernel=k, stride=s, act=act, name=name)


def build_analysis(n, c_y):
    return [
        _conv("g_a.0", 3, n, 3, 2),
        LayerSpec("gdn", n, n, name="g_a.1"),
        LayerSpec("residual_block", n, n, name="g_a.2"),
        LayerSpec("drm_down", n, n, name="g_a.3"),
        LayerSpec("attention_block", n, n, name="g_a.4"),
        LayerSpec("residual_block", n, n, name="g_a.5"),
        _conv("g_a.6", n, n, 3, 2),
        LayerSpec("gdn", n, n, name="g_a.7"),
        LayerSpec("residual_block", n, n, name="g_a.8"),
        LayerSpec("attention_block", n, n, name="g_a.9"),
        _conv("g_a.10", n, c_y, 3, 2),
    ]


def build_synthesis(n, c_y, cfg):
    if cfg in (1, 2):
        w = n
    elif cfg == 3:
        w = math.ceil(0.75 * n)
    elif cfg == 4:
        w = math.ceil(0.5 * n)
    else:
        raise ValueError(f"invalid decoder configuration {cfg}")
    layers = [
        _deconv("g_s.0", c_y, w, 4, 2),
        LayerSpec("igdn", w, w, name="g_s.1"),
        LayerSpec("attention_block", w, w, name="g_s.2"),
        LayerSpec("residual_block", w, w, name="g_s.3"),
        _deconv("g_s.4", w, w, 4, 2),
        LayerSpec("igdn", w, w, name="g_s.5"),
        LayerSpec("residual_block", w, w, name="g_s.6"),
        LayerSpec("attention_block", w, w, name="g_s.7"),
        LayerSpec("drm_up", w, w, name="g_s.8"),
        LayerSpec("residual_block", w, w, name="g_s.9"),
        _deconv("g_s.10", w, 3, 4, 2),
    ]
    if cfg == 2:
        layers = [l for l in layers if l.kind not in ("attention_block", "residual_block")]
    return layers


def build_hyper_analysis(n, c_y, c_z):
    return [
        _conv("h_a.0", c_y, n, 3, 1, act=True),
        _conv("h_a.1", n, n, 3, 2, act=True),
        _conv("h_a.2", n, c_z, 3, 2),  # last hyper layer: no activation
    ]


def build_hyper_synthesis(n, c_y, c_z):
    return [
        _deconv("h_s.0", c_z, n, 4, 2, act=True),
        _deconv("h_s.1", n, n, 4, 2, act=True),
        _conv("h_s.2", n, 2 * c_y, 3, 1),  # last hyper layer: no activation
    ]


def build_pen1(c_y):
    return [
        _conv("pen1.0", 3 * c_y, 4 * c_y, 1, 1, act=True),
        _conv("pen1.1", 4 * c_y, 5 * c_y, 1, 1, act=True),
        _conv("pen1.2", 5 * c_y, 30 * c_y, 1, 1),
    ]


def build_pen2(c_y):
    return [
        _conv("pen2.0", 3 * c_y, 4 * c_y, 1, 1, act=True),
        _conv("pen2.1", 4 * c_y, 4 * c_y, 1, 1, act=True),
        _conv("pen2.2", 4 * c_y, 9 * c_y, 1, 1),
    ]


def build_layer_specs(cfg, n, c_y, c_z):
    """All layer specs per role, plus the standalone context kernel spec."""
    specs = {
        "analysis": build_analysis(n, c_y),
        "synthesis": build_synthesis(n, c_y, cfg),
        "hyper_analysis": build_hyper_analysis(n, c_y, c_z),
        "hyper_synthesis": build_hyper_synthesis(n, c_y, c_z),
        "pen1": build_pen1(c_y),
        "pen2": build_pen2(c_y),
    }
    ctx = LayerSpec("masked_context_conv", c_y, c_y, kernel=5, stride=1, name="ctx")
    return specs, ctx


@dataclass
class Model:
    """A loaded model: weights, graphs, and the hyper-latent prior."""

    cfg: int
    n: int
    c_y: int
    c_z: int
    weights: dict = field(repr=False)
    prior: FactorizedPrior = field(repr=False)

    def __post_init__(self):
        specs, ctx = build_layer_specs(self.cfg, self.n, self.c_y, self.c_z)
        self._specs = specs
        self.ctx_spec = ctx
        self.graphs = {
            role: ModelGraph(role=role, layers=layers, weights=self.weights,
                             latent_channels=self.c_y, hyper_channels=self.c_z,
                             width=self.n)
            for role, layers in specs.items()
        }
        self._validate()

    def _validate(self):
        expected = {}
        for role in ROLES:
            for spec in self._specs[role]:
                expected.update(spec.weight_shapes())
        expected.update(self.ctx_spec.weight_shapes())
        missing = sorted(set(expected) - set(self.weights))
        if missing:
            raise ModelFormatError(f"model missing tensors: {missing[:4]}"
                                   f"{'...' if len(missing) > 4 else ''}")
        extra = sorted(set(self.weights) - set(expected))
        if extra:
            raise ModelFormatError(f"model has unreferenced tensors: {extra[:4]}")
        for name, shape in expected.items():
            got = self.weights[name].shape
            if tuple(got) != tuple(shape):
                raise ShapeError(f"tensor {name}: expected shape {shape}, got {got}")
        if len(self.prior) != self.c_z:
            raise ModelFormatError(f"prior has {len(self.prior)} channels, "
                                   f"model declares C_z={self.c_z}")
        self.prior.validate()
        for name in list(self.weights):
            if name.endswith(".beta"):
                gname = name[:-5] + ".gamma"
                b, g = clamp_gdn_params(self.weights[name], self.weights[gname])
                self.weights[name] = b
                self.weights[gname] = g

    def graph(self, role):
        return self.graphs[role]

    def info(self):
        """Exact per-graph and total parameter counts."""
        counts = {role: g.param_count() for role, g in self.graphs.items()}
        counts["context"] = sum(int(np.prod(s))
                                for s in self.ctx_spec.weight_shapes().values())
        counts["total"] = sum(counts.values())
        return {"cfg": self.cfg, "N": self.n, "C_y": self.c_y, "C_z": self.c_z,
                "params": counts}


def _xavier(rng, shape):
    if len(shape) == 4:
        rec = int(np.prod(shape[2:]))
        fan_in, fan_out = shape[1] * rec, shape[0] * rec
    elif len(shape) == 2:
        fan_in, fan_out = shape[1], shape[0]
    else:
        fan_in = fan_out = shape[0]
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(np.float32)


def gen_fixture(seed, cfg=1, n=128, c_y=None, c_z=None):
    """Deterministic seeded stand-in for trained weights.

    Kernels are Xavier-uniform so fixture graphs stay finite on [0,1] inputs;
    GDN starts at beta=1, gamma=0.1*I; deconv kernels use fan counts from
    their (C_in, C_out) layout; the hyper prior is a discretized per-channel
    logistic frozen over [-30, 30].
    """
    c_y = n if c_y is None else c_y
    c_z = max(n // 2, 4) if c_z is None else c_z
    rng = np.random.default_rng(seed)
    specs, ctx = build_layer_specs(cfg, n, c_y, c_z)
    weights = {}
    all_specs = [s for role in ROLES for s in specs[role]] + [ctx]
    deconv_kernels = {f"{s.name}.w" for s in all_specs if s.kind == "deconv"}
    deconv_kernels |= {f"{s.name}.cls.w" for s in all_specs if s.kind == "drm_up"}
    deconv_kernels |= {f"{s.name}.sc.w" for s in all_specs if s.kind == "drm_up"}
    for spec in all_specs:
        for name, shape in sorted(spec.weight_shapes().items()):
            if name.endswith(".beta"):
                weights[name] = np.ones(shape, dtype=np.float32)
            elif name.endswith(".gamma"):
                weights[name] = (0.1 * np.eye(shape[0])).astype(np.float32)
            elif len(shape) == 1:
                weights[name] = np.zeros(shape, dtype=np.float32)
            elif name in deconv_kernels:
                # deconv kernels are stored (C_in, C_out, k, k); draw with fan
                # roles swapped so the scale still tracks the true fan counts
                co, ci = shape[1], shape[0]
                w = _xavier(rng, (co, ci) + shape[2:])
                weights[name] = np.ascontiguousarray(w.transpose(1, 0, 2, 3))
            else:
                weights[name] = _xavier(rng, shape)
    tables = []
    for c in range(c_z):
        s = float(rng.uniform(0.5, 2.5))
        sym = np.arange(-30, 31, dtype=np.float64)
        pmf = (logistic_cdf(sym + 0.5, 0.0, s) - logistic_cdf(sym - 0.5, 0.0, s))
        pmf[0] += logistic_cdf(-30.5, 0.0, s)
        pmf[-1] += 1.0 - logistic_cdf(30.5, 0.0, s)
        tables.append(build_quantized_cdf(pmf, -30, 30, precision=16))
    return Model(cfg=cfg, n=n, c_y=c_y, c_z=c_z, weights=weights,
                 prior=FactorizedPrior(channels=tuple(tables)))


# -- serialization ----------------------------------------------------------

def _need(f, n, what):
    b = f.read(n)
    if len(b) != n:
        raise ModelFormatError(f"unexpected end of file while reading {what}")
    return b


def save_model(model: Model, path):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BBHHH", VERSION, model.cfg, model.n, model.c_y, model.c_z))
    names = sorted(model.weights)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        nb = name.encode()
        arr = np.ascontiguousarray(model.weights[name], dtype=np.float32)
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype("<f4").tobytes())
    buf.write(struct.pack("<H", len(model.prior)))
    for t in model.prior.channels:
        buf.write(struct.pack("<iiB", t.lo, t.hi, t.precision))
        buf.write(np.ascontiguousarray(t.cum, dtype="<u4").tobytes())
    data = buf.getvalue()
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def load_model(path) -> Model:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ModelFormatError(f"not a model file: bad magic {magic!r}")
        version, cfg, n, c_y, c_z = struct.unpack("<BBHHH", _need(f, 8, "header"))
        if version != VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        (count,) = struct.unpack("<I", _need(f, 4, "tensor count"))
        weights = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _need(f, 2, "tensor name length"))
            name = _need(f, nlen, "tensor name").decode()
            (rank,) = struct.unpack("<B", _need(f, 1, "tensor rank"))
            dims = struct.unpack(f"<{rank}I", _need(f, 4 * rank, "tensor dims"))
            size = int(np.prod(dims)) if rank else 1
            raw = _need(f, 4 * size, f"tensor {name} data")
            if name in weights:
                raise ModelFormatError(f"duplicate tensor {name}")
            weights[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        (nch,) = struct.unpack("<H", _need(f, 2, "CDF channel count"))
        tables = []
        for c in range(nch):
            lo, hi, prec = struct.unpack("<iiB", _need(f, 9, f"CDF header {c}"))
            cnt = hi - lo + 2
            raw = _need(f, 4 * cnt, f"CDF table {c}")
            cum = np.frombuffer(raw, dtype="<u4").copy()
            tables.append(QuantizedCdf(lo=lo, hi=hi, precision=prec, cum=cum))
        if f.read(1):
            raise ModelFormatError("trailing bytes after model payload")
    return Model(cfg=cfg, n=n, c_y=c_y, c_z=c_z, weights=weights,
                 prior=FactorizedPrior(channels=tuple(tables)))
