import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("TINTRACK_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "tintrack._kernels",
                    ["src/tintrack/_kernels.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # Pure-Python fallback kernels are used when the extension is absent.
        ext_modules = []

setup(ext_modules=ext_modules)
