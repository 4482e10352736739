import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

ext = Extension(
    "maqam_asa.backend._ckernels",
    ["src/maqam_asa/backend/_ckernels.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level=3))
