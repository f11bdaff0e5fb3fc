"""Build script: compiles the range-coder hot kernel when a toolchain is present.

The package works without the extension (pure-Python fallback is selected at
import time); the compiled kernel is what makes the entropy-coding acceptance
corpus fast. Set I2VC_NO_EXT=1 to skip the build entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Degrade to the pure-Python kernel if compilation fails."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"warning: extension build failed ({exc}); "
                  f"falling back to pure-Python range coder")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  f"falling back to pure-Python range coder")


ext_modules = []
if os.environ.get("I2VC_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "i2vc._range_cy",
                    ["src/i2vc/_range_cy.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
