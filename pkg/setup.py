"""Build script for the optional compiled quadrature core.

The package works without the extension (a pure-numpy backend is selected
at import time), so any build failure here is non-fatal for users who
install with ``--no-build-isolation`` on exotic platforms.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "bbe._kernel_cython",
                ["src/bbe/_kernel_cython.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
