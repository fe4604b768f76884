"""Builds the optional compiled kernel core.

The extension accelerates the gather/scatter message-passing loops; if the
build is unavailable (no compiler, no Cython) the package falls back to the
pure-numpy kernels at import time.

Usage for an in-place development build:
    python setup.py build_ext --inplace
"""

from setuptools import setup, Extension

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext = Extension(
        "hgnn._kernels",
        ["src/hgnn/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
    ext_modules = cythonize(
        [ext],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
