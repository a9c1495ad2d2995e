import numpy
from setuptools import Extension, setup

# The compiled stencil core is optional: if the build fails (no compiler,
# no Cython), the package falls back to the pure-numpy kernels at import.
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "riccilab._stencil_core",
                ["src/riccilab/_stencil_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
