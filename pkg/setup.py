"""Build script for the optional compiled kernels.

The extension is marked optional: if no C compiler (or Cython) is available
the install still succeeds and the package falls back to the pure-Python
chain loops at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "fmala._kernels",
                ["src/fmala/_kernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
