"""Build script for the optional compiled statevector kernel.

The package works without the extension; ``qhybrid.kernels`` falls back to
a vectorized numpy implementation when the compiled module is missing.
"""
import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("QHYBRID_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "qhybrid.kernels._ckernel",
                ["src/qhybrid/kernels/_ckernel.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
