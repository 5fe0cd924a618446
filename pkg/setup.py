"""Build hook for the optional compiled kernels.

The extension is marked optional: if Cython or a C compiler is missing the
package still installs and runs on the pure-numpy fallback.
"""
import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("FBTUR_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "fbtur._kernels",
        ["src/fbtur/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-fcx-limited-range"],
        optional=True,
    )
    try:
        return _cythonize(cythonize, ext)
    except Exception as exc:  # noqa: BLE001
        print(f"warning: skipping compiled kernels ({exc})")
        return []


def _cythonize(cythonize, ext):
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )


setup(ext_modules=_extensions())
