import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: when Cython or a C compiler is missing
# the package falls back to the pure-numpy implementations at import time.
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "shallowbayes._kernels",
                ["src/shallowbayes/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
