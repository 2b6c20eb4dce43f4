import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DASEL_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        print("Cython/numpy unavailable; installing the pure-Python kernels only")
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "dasel.nn._gru_ext",
                    ["src/dasel/nn/_gru_ext.pyx"],
                    include_dirs=[np.get_include(), "src/dasel/nn"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3", "-march=native", "-ffast-math"],
                    libraries=["mvec", "m"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
