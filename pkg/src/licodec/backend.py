"""Kernel backend selection.

The compiled extension and the NumPy fallback expose the same signatures
(see ``_pykernels`` for the contract). Dispatch is per kernel class:

* range coder loops: compiled when available. The per-symbol loop cannot be
  vectorized and the compiled version is two orders of magnitude faster;
  both produce identical bytes, so segments are interchangeable.
* float kernels (conv/deconv/deform/gdn): NumPy by default even when the
  extension is built, because the im2col+BLAS path outperforms the direct
  loops (``python -m licodec.bench_backends`` shows the comparison).
  LICODEC_EXT_CONV=1 forces the compiled float kernels.

LICODEC_PURE_PY=1 disables the extension entirely. Within one process the
selection is fixed at import, so encode and decode always agree.
"""

import os

from . import _pykernels

_ckernels = None
if not os.environ.get("LICODEC_PURE_PY"):
    try:
        from . import _ckernels  # type: ignore[no-redef]
    except ImportError:
        _ckernels = None

HAVE_EXT = _ckernels is not None
BACKEND = "cython" if HAVE_EXT else "python"

if HAVE_EXT and os.environ.get("LICODEC_EXT_CONV"):
    conv2d = _ckernels.conv2d
    deconv2d = _ckernels.deconv2d
    deform_conv2d = _ckernels.deform_conv2d
    gdn = _ckernels.gdn
else:
    conv2d = _pykernels.conv2d
    deconv2d = _pykernels.deconv2d
    deform_conv2d = _pykernels.deform_conv2d
    gdn = _pykernels.gdn

if HAVE_EXT:
    rc_encode = _ckernels.rc_encode
    rc_decode = _ckernels.rc_decode
else:
    rc_encode = _pykernels.rc_encode
    rc_decode = _pykernels.rc_decode
