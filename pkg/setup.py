"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time); set LICODEC_PURE_PY=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Degrade to the pure-Python package when compilation fails."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, broken toolchain, ...
            print(f"warning: building licodec._ckernels failed ({exc}); "
                  "falling back to pure-Python kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "falling back to pure-Python kernels")


ext_modules = []
cmdclass = {}
if not os.environ.get("LICODEC_PURE_PY"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "licodec._ckernels",
                    ["src/licodec/_ckernels.pyx"],
                    extra_compile_args=["-O3", "-fopenmp"],
                    extra_link_args=["-fopenmp"],
                )
            ],
            language_level="3",
        )
        cmdclass["build_ext"] = optional_build_ext
    except ImportError:
        print("warning: Cython not available; building pure-Python licodec")

setup(ext_modules=ext_modules, cmdclass=cmdclass)
