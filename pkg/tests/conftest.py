import numpy as np
import pytest

from licodec import _pykernels
from licodec.backend import HAVE_EXT
from licodec.models import gen_fixture

if HAVE_EXT:
    from licodec import _ckernels
    KERNEL_IMPLS = [("python", _pykernels), ("cython", _ckernels)]
else:
    KERNEL_IMPLS = [("python", _pykernels)]


@pytest.fixture(params=KERNEL_IMPLS, ids=[n for n, _ in KERNEL_IMPLS])
def kernels(request):
    return request.param[1]


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)


_MODEL_CACHE = {}


def cached_fixture(seed, cfg=1, n=64, c_y=None, c_z=None):
    key = (seed, cfg, n, c_y, c_z)
    if key not in _MODEL_CACHE:
        _MODEL_CACHE[key] = gen_fixture(seed, cfg=cfg, n=n, c_y=c_y, c_z=c_z)
    return _MODEL_CACHE[key]


@pytest.fixture(scope="session")
def small_model():
    return cached_fixture(7, cfg=1, n=64)
