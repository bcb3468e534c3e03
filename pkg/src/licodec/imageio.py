"""8-bit PNG / binary PPM image loading and saving.

Images are exchanged with the codec as float32 (3, H, W) arrays in [0, 1].
Anything that is not 8-bit 3-channel (16-bit PNGs in particular) is rejected.
"""

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageError

_FORMATS = {".png": "PNG", ".ppm": "PPM"}


def load_image(path):
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError) as e:
        raise ImageError(f"cannot read image {path}: {e}") from e
    if img.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
        raise ImageError(f"unsupported image depth {img.mode!r} in {path}: "
                         "only 8-bit images are accepted")
    if img.mode != "RGB":
        if img.mode in ("L", "P", "RGBA"):
            img = img.convert("RGB")
        else:
            raise ImageError(f"unsupported image mode {img.mode!r} in {path}")
    arr = np.asarray(img, dtype=np.uint8)  # (H, W, 3)
    return np.ascontiguousarray(arr.transpose(2, 0, 1)).astype(np.float32) / 255.0


def save_image(path, x):
    """x is float32 (3, H, W) in [0, 1]; format chosen by file extension."""
    suffix = str(path)[str(path).rfind("."):].lower()
    fmt = _FORMATS.get(suffix)
    if fmt is None:
        raise ImageError(f"unsupported output format {suffix!r} (use .png or .ppm)")
    u8 = np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path, format=fmt)
