"""Build script for the optional compiled vector-index kernels.

The package is fully functional without the extension: ragdag.vindex falls
back to pure-Python kernels at import time. Building the extension is
attempted here and skipped (with a warning) if no compiler toolchain is
available.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the Cython kernels if possible; never fail the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # toolchain missing, compile error, ...
            print(f"WARNING: compiled kernels not built ({exc}); "
                  "falling back to pure-Python kernels", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"WARNING: skipping {ext.name}: {exc}", file=sys.stderr)


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"WARNING: {exc}; compiled kernels will not be built",
              file=sys.stderr)
        return []
    ext = Extension(
        "ragdag.vindex._kernels_cy",
        ["src/ragdag/vindex/_kernels_cy.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
