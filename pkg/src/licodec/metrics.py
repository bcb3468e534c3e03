"""Forward loss and quality metrics.

Distortion conventions: images live in [0,1]; MSE for PSNR and for the
rate-distortion loss is computed on the 8-bit scale (differences times 255),
so PSNR = 10*log10(255^2 / MSE). Identical images report the 100 dB cap.

The rate-distortion objective is
    loss = lambda1 * D + H_y + H_z + lambda2 * L1(y_hat)
with H terms in bits (theoretical code lengths) and L1 the plain sum of
absolute latent symbols. The distillation loss is the sum of three MSEs:
reconstructions plus the two raw parameter-plane stacks, teacher vs student.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeError

PSNR_CAP = 100.0
LAMBDA1_SET = (0.0016, 0.0032, 0.0075, 0.015, 0.03, 0.045, 0.06)

# canonical 5-scale weights of the multi-scale SSIM definition
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_K1, _K2 = 0.01, 0.03


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.0016
    lambda2: float = 0.0
    lambda3: float = 0.0
    distortion: str = "mse"  # or "ms-ssim"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda3 < 0:
            raise ValueError("loss multipliers must be non-negative")
        if self.distortion not in ("mse", "ms-ssim"):
            raise ValueError(f"unknown distortion kind {self.distortion!r}")


@dataclass
class LossReport:
    distortion: float
    bits_y: float
    bits_z: float
    l1: float
    loss_teacher: float
    loss_kd: float
    bpp: float

    def lines(self):
        return [f"{k}={v:.6f}" for k, v in asdict(self).items()]

    def to_json(self):
        return json.dumps(asdict(self), indent=2)


def mse(a, b):
    """Mean squared error on the 8-bit scale (inputs in [0,1])."""
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} vs {b.shape}")
    d = (a.astype(np.float64) - b.astype(np.float64)) * 255.0
    return float(np.mean(d * d))


def psnr(a, b):
    m = mse(a, b)
    if m <= 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(255.0 ** 2 / m), PSNR_CAP)


def _gauss_window(size=11, sigma=1.5):
    g = np.exp(-0.5 * ((np.arange(size) - (size - 1) / 2.0) / sigma) ** 2)
    return g / g.sum()


def _valid_sep_conv(img, win):
    """Separable valid-mode window filter over the two trailing axes."""
    k = len(win)
    v = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2)
    v = np.tensordot(v, win, axes=([-1], [0]))
    v = np.lib.stride_tricks.sliding_window_view(v, k, axis=-1)
    return np.tensordot(v, win, axes=([-1], [0]))


def _ssim_cs(a, b, win):
    mu_a = _valid_sep_conv(a, win)
    mu_b = _valid_sep_conv(b, win)
    saa = _valid_sep_conv(a * a, win) - mu_a * mu_a
    sbb = _valid_sep_conv(b * b, win) - mu_b * mu_b
    sab = _valid_sep_conv(a * b, win) - mu_a * mu_b
    c1 = _K1 ** 2
    c2 = _K2 ** 2
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    cs = (2 * sab + c2) / (saa + sbb + c2)
    return lum * cs, cs


def _downsample2(img):
    h, w = img.shape[-2] & ~1, img.shape[-1] & ~1
    c = img[..., :h, :w]
    return (c[..., 0::2, 0::2] + c[..., 0::2, 1::2]
            + c[..., 1::2, 0::2] + c[..., 1::2, 1::2]) / 4.0


def ms_ssim(a, b, weights=MSSSIM_WEIGHTS):
    """Multi-scale SSIM, 11x11 Gaussian window sigma 1.5, inputs in [0,1].

    Per-channel products over scales, then the channel mean. Requires the
    smaller image dimension to cover the dyadic scale pyramid.
    """
    if a.shape != b.shape:
        raise ShapeError(f"ms_ssim: shapes {a.shape} vs {b.shape}")
    levels = len(weights)
    min_dim = 10 * 2 ** (levels - 1)  # 160 for 5 dyadic scales
    if min(a.shape[-2], a.shape[-1]) < min_dim:
        raise ShapeError(f"image too small for {levels}-scale MS-SSIM: "
                         f"{a.shape[-2]}x{a.shape[-1]} (min dimension {min_dim})")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    per_channel = np.ones(a.shape[0], dtype=np.float64)
    for lv in range(levels):
        dim = min(a.shape[-2], a.shape[-1])
        win = _gauss_window(min(11, dim))
        ssim_map, cs_map = _ssim_cs(a, b, win)
        if lv == levels - 1:
            term = ssim_map.mean(axis=(-2, -1))
        else:
            term = np.maximum(cs_map.mean(axis=(-2, -1)), 0.0)
        per_channel *= term ** weights[lv]
        if lv != levels - 1:
            a = _downsample2(a)
            b = _downsample2(b)
    return float(per_channel.mean())


def teacher_loss(x, x_hat, bits_y, bits_z, y_hat, config: LossConfig):
    """Rate-distortion objective with rate terms supplied in bits."""
    if config.distortion == "mse":
        d = mse(x, x_hat)
    else:
        d = 1.0 - ms_ssim(x, x_hat)
    l1 = float(np.sum(np.abs(y_hat.astype(np.float64))))
    total = config.lambda1 * d + bits_y + bits_z + config.lambda2 * l1
    pixels = x.shape[-2] * x.shape[-1]
    return LossReport(distortion=d, bits_y=float(bits_y), bits_z=float(bits_z),
                      l1=l1, loss_teacher=float(total), loss_kd=0.0,
                      bpp=(float(bits_y) + float(bits_z)) / pixels)


def _plain_mse(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(
            f"kd_loss: teacher/student {what} shapes differ ({a.shape} vs "
            f"{b.shape}); distilling across parameter widths needs an "
            "explicit projection, which is not defined here")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def kd_loss(x_hat_t, x_hat_s, theta1_t, theta1_s, theta2_t, theta2_s):
    """Distillation loss: MSE of reconstructions plus both raw theta stacks."""
    return (_plain_mse(x_hat_t, x_hat_s, "reconstruction")
            + _plain_mse(theta1_t, theta1_s, "anchor parameters")
            + _plain_mse(theta2_t, theta2_s, "non-anchor parameters"))


def sparsity_report(y_hat):
    """(all-zero channel count, total channels, per-channel L1)."""
    c = y_hat.shape[0]
    per_channel = np.abs(y_hat.astype(np.float64)).sum(axis=(1, 2))
    zero = int(np.sum(per_channel == 0))
    return zero, c, per_channel


def metrics_report(ref, test):
    return {"psnr_db": psnr(ref, test), "ms_ssim": ms_ssim(ref, test)}
