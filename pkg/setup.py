import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the numpy fallback still works without the extension
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "holoforge.kernels._ckernels",
                ["src/holoforge/kernels/_ckernels.pyx"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                include_dirs=[np.get_include(), "src/holoforge/kernels"],
                extra_compile_args=["-O3", "-march=native", "-mprefer-vector-width=512"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
