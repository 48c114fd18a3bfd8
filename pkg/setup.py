"""Build script for the optional compiled grid-sum kernels.

The package works without the extension (a pure-numpy fallback is selected
at import time); building it makes the large momentum-grid sums roughly an
order of magnitude faster:

    python setup.py build_ext --inplace
"""
import numpy as np
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "frlab._kernels.grid_sums",
        sources=["src/frlab/_kernels/grid_sums.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-fopenmp"],
        extra_link_args=["-fopenmp"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level="3")

setup(ext_modules=ext_modules)
