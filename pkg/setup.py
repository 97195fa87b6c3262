from setuptools import Extension, setup
from Cython.Build import cythonize
import numpy as np

# optional=True: the package falls back to the pure-numpy kernels when the
# extension cannot be built on the host.
ext = Extension(
    "sdmax._kernels",
    ["src/sdmax/_kernels.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level=3))
