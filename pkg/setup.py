import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "diffdyn.tape._core",
    ["src/diffdyn/tape/_core.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O3"],
)
# The package stays importable without the extension; the pure-Python
# executor is selected at import time when the build is unavailable.
ext.optional = True

setup(ext_modules=cythonize([ext], language_level=3))
