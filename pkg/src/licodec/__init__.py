"""licodec: a learned-image-codec runtime with a parallel checkerboard
entropy model, GLLMM/GMM mixture coding, zero-channel skipping and a
deterministic range coder.

Hot kernels run in a compiled extension when available and fall back to
NumPy otherwise; ``licodec.backend.BACKEND`` names the active one.
"""

__version__ = "0.1.0"

from .backend import BACKEND, HAVE_EXT
from .checkerboard import (CheckerboardMask, DecodeResult, LatentCodingResult,
                           decode_bench, decode_image, decode_latents,
                           encode_image, encode_latents, make_masks, merge,
                           split)
from .container import BitstreamContainer, inspect, parse_container, write_container
from .distributions import (FactorizedPrior, GllmmParams, GmmParams,
                            QuantizedCdf, build_quantized_cdf, gaussian_cdf,
                            laplacian_cdf, logistic_cdf, mixture_pmf, pmf_bits)
from .errors import (BitstreamError, ImageError, LicError, ModelFormatError,
                     ModelMismatchError, ShapeError)
from .metrics import (LossConfig, LossReport, kd_loss, ms_ssim, mse, psnr,
                      sparsity_report, teacher_loss)
from .models import Model, gen_fixture, load_model, save_model
from .range_coder import EncodedSegment, rc_decode, rc_encode

__all__ = [
    "BACKEND", "HAVE_EXT", "__version__",
    "CheckerboardMask", "DecodeResult", "LatentCodingResult",
    "decode_bench", "decode_image", "decode_latents", "encode_image",
    "encode_latents", "make_masks", "merge", "split",
    "BitstreamContainer", "inspect", "parse_container", "write_container",
    "FactorizedPrior", "GllmmParams", "GmmParams", "QuantizedCdf",
    "build_quantized_cdf", "gaussian_cdf", "laplacian_cdf", "logistic_cdf",
    "mixture_pmf", "pmf_bits",
    "BitstreamError", "ImageError", "LicError", "ModelFormatError",
    "ModelMismatchError", "ShapeError",
    "LossConfig", "LossReport", "kd_loss", "ms_ssim", "mse", "psnr",
    "sparsity_report", "teacher_loss",
    "Model", "gen_fixture", "load_model", "save_model",
    "EncodedSegment", "rc_decode", "rc_encode",
]
