"""Build script for the compiled kernel extension.

The extension is optional: if Cython or a C compiler is unavailable the
package installs anyway and falls back to the pure-NumPy kernels in
``bbsc._core_py`` (selected at import time by ``bbsc.backend``).

In-place build for development:

    python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

try:
    import numpy as np
    import scipy  # noqa: F401  (the extension cimports its BLAS bindings)
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "bbsc._core",
                ["src/bbsc/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
