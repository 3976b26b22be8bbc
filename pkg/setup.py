"""Build script for the optional compiled rasterizer kernel.

The package works without the extension (a pure-numpy kernel is selected at
import time), so a failed Cython build degrades to the fallback instead of
breaking the install.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/sceneforge/renderer/_kernel_cy.pyx",
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
        include_path=["src"],
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
except Exception as exc:  # pragma: no cover - build-env dependent
    import sys

    print(f"sceneforge: skipping compiled kernel ({exc!r})", file=sys.stderr)

setup(ext_modules=ext_modules)
