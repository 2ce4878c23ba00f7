import os

import numpy as np
from setuptools import setup

ext_modules = []
if os.environ.get("RANKLSD_NO_EXTENSION", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # build without the compiled core; the numpy fallback is used
        cythonize = None
    if cythonize is not None:
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("ranklsd._kernels", ["src/ranklsd/_kernels.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            language_level=3,
        )

setup(ext_modules=ext_modules)
