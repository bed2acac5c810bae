"""Build script for the compiled sampling kernels.

The package works without the extension (a NumPy fallback is selected at
import time), so any failure here degrades to a pure-Python install
instead of aborting.
"""

from setuptools import Extension, setup


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "panoweave._fastpath",
        ["src/panoweave/_fastpath.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off keeps the C arithmetic bit-identical to the
        # NumPy fallback (no FMA contraction).
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": 3,
        },
    )


setup(ext_modules=_extensions())
