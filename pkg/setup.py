"""Build script: compiles the optional Cython hot-kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so any failure to cythonize or compile is non-fatal.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/walkops/_kernels.pyx"],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"walkops: skipping compiled kernels ({exc!r}); using pure-python fallback")
    ext_modules = []

setup(ext_modules=ext_modules)
