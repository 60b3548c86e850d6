"""Build the optional compiled kernel; the package falls back to numpy without it."""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("RATIO_CONSENSUS_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "ratio_consensus._kernel",
                    ["src/ratio_consensus/_kernel.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )

setup(ext_modules=ext_modules)
