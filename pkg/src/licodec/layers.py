"""Inference-only layer zoo and graph evaluation.

Layers operate on float32 (C, H, W) arrays. A model graph is an ordered list
of ``LayerSpec`` entries; shortcut connections live inside the composite
kinds (residual_block, attention_block, drm_down/drm_up), so evaluation is a
plain sequential fold. Leaky ReLU slope is fixed at 0.01. GDN parameters are
clamped at load time (beta >= 1e-6, gamma >= 0).
"""

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ShapeError

LEAKY_SLOPE = np.float32(0.01)
BETA_MIN = 1e-6

LAYER_KINDS = ("conv", "deconv", "gdn", "igdn", "leaky_relu", "residual_block",
               "attention_block", "deform_conv", "drm_down", "drm_up",
               "masked_context_conv")


def leaky_relu(x):
    return np.where(x > 0, x, x * LEAKY_SLOPE)


def sigmoid(x):
    x64 = x.astype(np.float64)
    return (1.0 / (1.0 + np.exp(-x64))).astype(np.float32)


def round_half_away(x):
    """Inference quantizer: round half away from zero, to int32 symbols."""
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int32)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    c_in: int
    c_out: int
    kernel: int = 0
    stride: int = 1
    act: bool = False  # trailing leaky ReLU
    name: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride not in (1, 2):
            raise ValueError(f"layer {self.name}: stride must be 1 or 2")

    def weight_shapes(self):
        """Mapping weight name -> expected shape for this layer."""
        n, ci, co, k = self.name, self.c_in, self.c_out, self.kernel
        if self.kind == "conv" or self.kind == "masked_context_conv":
            return {f"{n}.w": (co, ci, k, k), f"{n}.b": (co,)}
        if self.kind == "deconv":
            return {f"{n}.w": (ci, co, k, k), f"{n}.b": (co,)}
        if self.kind in ("gdn", "igdn"):
            return {f"{n}.beta": (ci,), f"{n}.gamma": (ci, ci)}
        if self.kind == "leaky_relu":
            return {}
        if self.kind == "residual_block":
            ch = max(ci // 2, 1)
            return {f"{n}.c1.w": (ch, ci, 3, 3), f"{n}.c1.b": (ch,),
                    f"{n}.c2.w": (ci, ch, 3, 3), f"{n}.c2.b": (ci,)}
        if self.kind == "attention_block":
            ch = max(ci // 2, 1)
            shapes = {}
            for br in ("t", "m"):
                for u in range(3):
                    shapes[f"{n}.{br}{u}.a.w"] = (ch, ci, 1, 1)
                    shapes[f"{n}.{br}{u}.a.b"] = (ch,)
                    shapes[f"{n}.{br}{u}.b.w"] = (ch, ch, 3, 3)
                    shapes[f"{n}.{br}{u}.b.b"] = (ch,)
                    shapes[f"{n}.{br}{u}.c.w"] = (ci, ch, 1, 1)
                    shapes[f"{n}.{br}{u}.c.b"] = (ci,)
                shapes[f"{n}.{br}p.w"] = (ci, ci, 1, 1)
                shapes[f"{n}.{br}p.b"] = (ci,)
            return shapes
        if self.kind == "deform_conv":
            return {f"{n}.off.w": (2 * k * k, ci, 3, 3), f"{n}.off.b": (2 * k * k,),
                    f"{n}.w": (co, ci, k, k), f"{n}.b": (co,)}
        if self.kind == "drm_down":
            return {f"{n}.off.w": (18, ci, 3, 3), f"{n}.off.b": (18,),
                    f"{n}.def.w": (ci, ci, 3, 3), f"{n}.def.b": (ci,),
                    f"{n}.cls.w": (co, ci, 3, 3), f"{n}.cls.b": (co,),
                    f"{n}.sc.w": (co, ci, 1, 1), f"{n}.sc.b": (co,)}
        if self.kind == "drm_up":
            return {f"{n}.off.w": (18, ci, 3, 3), f"{n}.off.b": (18,),
                    f"{n}.def.w": (ci, ci, 3, 3), f"{n}.def.b": (ci,),
                    f"{n}.cls.w": (ci, co, 4, 4), f"{n}.cls.b": (co,),
                    f"{n}.sc.w": (ci, co, 2, 2), f"{n}.sc.b": (co,)}
        raise AssertionError(self.kind)


def _conv(weights, name, x, stride, pad, threads):
    return backend.conv2d(x, weights[f"{name}.w"], weights[f"{name}.b"],
                          stride=stride, padding=pad, threads=threads)


def residual_block(x, weights, name, threads=1):
    """x + c2(lrelu(c1(x))), both convs 3x3 stride 1."""
    t = leaky_relu(_conv(weights, f"{name}.c1", x, 1, 1, threads))
    return x + _conv(weights, f"{name}.c2", t, 1, 1, threads)


def _bottleneck_unit(x, weights, name, threads):
    """Residual 1x1 -> 3x3 -> 1x1 bottleneck used inside attention branches."""
    t = leaky_relu(_conv(weights, f"{name}.a", x, 1, 0, threads))
    t = leaky_relu(_conv(weights, f"{name}.b", t, 1, 1, threads))
    return x + _conv(weights, f"{name}.c", t, 1, 0, threads)


def attention_block(x, weights, name, threads=1):
    """x + trunk(x) * sigmoid(mask(x)); both branches end in 1x1 projections."""
    t = x
    m = x
    for u in range(3):
        t = _bottleneck_unit(t, weights, f"{name}.t{u}", threads)
        m = _bottleneck_unit(m, weights, f"{name}.m{u}", threads)
    trunk = _conv(weights, f"{name}.tp", t, 1, 0, threads)
    gate = sigmoid(_conv(weights, f"{name}.mp", m, 1, 0, threads))
    return x + trunk * gate


def deform_conv(x, weights, name, threads=1):
    """Deformable conv whose offsets come from a 3x3 conv on the same input."""
    offsets = _conv(weights, f"{name}.off", x, 1, 1, threads)
    return backend.deform_conv2d(x, offsets, weights[f"{name}.w"],
                                 weights[f"{name}.b"], threads=threads)


def drm_forward(x, weights, name, direction, threads=1):
    """Deformable residual module: classical(deform(x)) + shortcut(x).

    The classical path and the 1x1-style shortcut both resample by stride 2,
    down via conv, up via deconv.
    """
    offsets = _conv(weights, f"{name}.off", x, 1, 1, threads)
    t = backend.deform_conv2d(x, offsets, weights[f"{name}.def.w"],
                              weights[f"{name}.def.b"], threads=threads)
    t = leaky_relu(t)
    if direction == "down":
        main = backend.conv2d(t, weights[f"{name}.cls.w"], weights[f"{name}.cls.b"],
                              stride=2, padding=1, threads=threads)
        short = backend.conv2d(x, weights[f"{name}.sc.w"], weights[f"{name}.sc.b"],
                               stride=2, padding=0, threads=threads)
    else:
        main = backend.deconv2d(t, weights[f"{name}.cls.w"], weights[f"{name}.cls.b"],
                                stride=2, padding=1, threads=threads)
        short = backend.deconv2d(x, weights[f"{name}.sc.w"], weights[f"{name}.sc.b"],
                                 stride=2, padding=0, threads=threads)
    return main + short


def checkerboard_kernel_mask(k=5):
    """Boolean (k,k) mask keeping taps whose offset parity is odd.

    From a non-anchor center those taps land exactly on anchor cells; the
    center tap is always masked out.
    """
    d = np.add.outer(np.arange(k) - k // 2, np.arange(k) - k // 2)
    return (np.abs(d) % 2).astype(bool)


def masked_context_conv(y1, weights, name="ctx", threads=1):
    """5x5 conv over the anchor plane with the checkerboard tap mask applied."""
    w = weights[f"{name}.w"]
    if w.shape[2] != 5 or w.shape[3] != 5:
        raise ShapeError(f"{name}: checkerboard context kernel must be 5x5, "
                         f"got {w.shape[2]}x{w.shape[3]}")
    wm = np.ascontiguousarray(w * checkerboard_kernel_mask(5).astype(np.float32))
    return backend.conv2d(y1, wm, weights[f"{name}.b"], stride=1, padding=2,
                          threads=threads)


def clamp_gdn_params(beta, gamma):
    return (np.maximum(beta, np.float32(BETA_MIN)),
            np.maximum(gamma, np.float32(0.0)))


def layer_forward(spec: LayerSpec, weights, x, threads=1):
    k = spec.kind
    if x.shape[0] != spec.c_in and k != "leaky_relu":
        raise ShapeError(f"layer {spec.name} ({k}): expected {spec.c_in} input "
                         f"channels, got {x.shape[0]}")
    if k == "conv":
        pad = spec.kernel // 2
        y = backend.conv2d(x, weights[f"{spec.name}.w"], weights[f"{spec.name}.b"],
                           stride=spec.stride, padding=pad, threads=threads)
    elif k == "deconv":
        pad = (spec.kernel - spec.stride) // 2 if spec.stride == 2 else spec.kernel // 2
        y = backend.deconv2d(x, weights[f"{spec.name}.w"], weights[f"{spec.name}.b"],
                             stride=spec.stride, padding=pad, threads=threads)
    elif k in ("gdn", "igdn"):
        y = backend.gdn(x, weights[f"{spec.name}.beta"], weights[f"{spec.name}.gamma"],
                        inverse=(k == "igdn"), threads=threads)
    elif k == "leaky_relu":
        y = leaky_relu(x)
    elif k == "residual_block":
        y = residual_block(x, weights, spec.name, threads)
    elif k == "attention_block":
        y = attention_block(x, weights, spec.name, threads)
    elif k == "deform_conv":
        y = deform_conv(x, weights, spec.name, threads)
    elif k == "drm_down":
        y = drm_forward(x, weights, spec.name, "down", threads)
    elif k == "drm_up":
        y = drm_forward(x, weights, spec.name, "up", threads)
    elif k == "masked_context_conv":
        y = masked_context_conv(x, weights, spec.name, threads)
    else:
        raise AssertionError(k)
    if spec.act:
        y = leaky_relu(y)
    return y


@dataclass
class ModelGraph:
    """Ordered layer list bound to a weight dictionary."""

    role: str
    layers: list
    weights: dict = field(repr=False)
    latent_channels: int = 0
    hyper_channels: int = 0
    width: int = 0

    def weight_names(self):
        names = []
        for spec in self.layers:
            names.extend(spec.weight_shapes().keys())
        return names

    def param_count(self):
        total = 0
        for spec in self.layers:
            for shape in spec.weight_shapes().values():
                total += int(np.prod(shape))
        return total


def run_graph(graph: ModelGraph, x, threads=1):
    """Deterministic sequential evaluation; errors name the failing layer."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.shape[0] != graph.layers[0].c_in:
        raise ShapeError(f"graph {graph.role}: expected {graph.layers[0].c_in} "
                         f"input channels, got {x.shape[0]}")
    for i, spec in enumerate(graph.layers):
        for wn in spec.weight_shapes():
            if wn not in graph.weights:
                raise ShapeError(f"graph {graph.role} layer {i} ({spec.name}): "
                                 f"missing weight {wn}")
        try:
            x = layer_forward(spec, graph.weights, x, threads)
        except ShapeError as e:
            raise ShapeError(f"graph {graph.role} layer {i} ({spec.name}): {e}") from e
        if not np.isfinite(x).all():
            raise ShapeError(f"graph {graph.role} layer {i} ({spec.name}): "
                             "non-finite activation")
    return x
