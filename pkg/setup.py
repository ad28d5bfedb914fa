"""Build script: compiles the optional Cython kernel core.

The package works without the extension (macd.kernels falls back to the
pure-Python implementation at import), so a failed compile downgrades to
a warning instead of aborting the install.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext = Extension(
        "macd.kernels._ckern",
        ["src/macd/kernels/_ckern.pyx"],
        include_dirs=[np.get_include()],
        # Kernels must be bit-identical to the pure-Python path: forbid
        # FMA contraction and keep strict IEEE semantics.
        extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pragma: no cover - degraded build path
    print(f"macd: skipping compiled kernels ({exc}); pure-Python fallback "
          "will be used", file=sys.stderr)

setup(ext_modules=ext_modules)
