"""Build script: compiles the optional selection kernel when Cython and a C
compiler are available, otherwise installs the pure-Python fallback only.

Set DOGMA_NO_EXT=1 to skip the extension build entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Degrade to a pure-Python install if the extension fails to compile."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(f"WARNING: compiled kernel unavailable ({exc}); "
              "falling back to the pure-Python selection kernel")


def extensions():
    if os.environ.get("DOGMA_NO_EXT") == "1":
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("WARNING: Cython not installed; building without the compiled kernel")
        return []
    ext = Extension(
        "dogma.kernels._select",
        sources=["src/dogma/kernels/_select.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
