"""Build hook for the optional compiled kernels.

The package works without the extension (pure-numpy fallback selected at
import time); a failed compile therefore degrades, it does not break.
"""

import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("SKELGEN_SKIP_EXT"):
        return []
    try:
        from Cython.Build import cythonize
        import numpy as np
    except ImportError:
        return []
    ext = Extension(
        "skelgen.kernels._fast",
        sources=["src/skelgen/kernels/_fast.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=_extensions())
