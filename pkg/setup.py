"""Build script: compiles the optional Cython refinement kernel.

The package works without the extension (a pure-Python kernel is selected at
import time), so a failed compile only costs speed. Build in place with:

    python setup.py build_ext --inplace
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "rangeloc._kernels._refine_c",
                ["src/rangeloc/_kernels/_refine_c.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError as exc:
    print(f"rangeloc: Cython unavailable ({exc}); installing pure-Python only",
          file=sys.stderr)

setup(ext_modules=ext_modules)
