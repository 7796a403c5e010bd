"""Build the optional Cython kernels; the package falls back to numpy without them.

TMOZ_NO_EXT=1      skip the extension entirely
TMOZ_PORTABLE=1    build without -march=native
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("TMOZ_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        # -ffast-math + libmvec lets gcc vectorise the exp() in the inner loop
        flags = ["-O3", "-ffast-math"]
        if not os.environ.get("TMOZ_PORTABLE"):
            flags.append("-march=native")
        ext_modules = cythonize(
            [
                Extension(
                    "tmoz._kernels",
                    ["src/tmoz/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=flags,
                    libraries=["mvec", "m"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
