"""Build script: compiles the optional Cython stepping kernel.

The package is fully functional without the extension (a NumPy/pure-Python
fallback is selected at import time), so a failed native build degrades to
the slow path instead of failing the install.
"""

import numpy
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """build_ext that downgrades compiler failures to a warning."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any build failure is non-fatal
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        import warnings

        warnings.warn(
            f"acfleet: native kernel build failed ({exc!r}); "
            "falling back to the pure-Python backend",
            stacklevel=1,
        )


def extensions():
    from Cython.Build import cythonize

    ext = Extension(
        "acfleet._kernels._core",
        ["src/acfleet/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
