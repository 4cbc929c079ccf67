"""Build script: compiles the optional geometry kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed. Build in place with:

    python setup.py build_ext --inplace
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "shapekit.kernels._geomc",
                ["src/shapekit/kernels/_geomc.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
