"""Build the optional Cython kernels.

    pip install -e . --no-build-isolation

If Cython or a C compiler is missing the package still installs and falls
back to the pure-Python kernels at import time.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "vidloc._ext._kernels",
                ["src/vidloc/_ext/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # bit-exact agreement with the Python twins
                extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
