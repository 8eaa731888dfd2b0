"""Build script for the optional compiled kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed Cython build is tolerated: we retry the setup
without extension modules rather than aborting the install.
"""

from setuptools import Extension, setup


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "icotracer._kernels",
        ["src/icotracer/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


try:
    setup(ext_modules=_extensions())
except Exception:  # noqa: BLE001 - extension is optional by design
    setup(ext_modules=[])
