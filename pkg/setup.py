"""Build script: compiles the Cython hot-loop kernels.

Set BIOFILMCAL_NO_EXT=1 to skip the extension build; the package then
falls back to the pure-Python kernels at import time.
"""
import os

import numpy as np
from setuptools import Extension, setup

if os.environ.get("BIOFILMCAL_NO_EXT") == "1":
    ext_modules = []
else:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "biofilmcal._kernels",
                ["src/biofilmcal/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
