"""Build the optional compiled sampling kernels.

The package works without them; ``heatdet._kernels`` falls back to numpy
when the extension cannot be imported.
"""
import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - pure-python install
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "heatdet._kernels._bilinear",
                ["src/heatdet/_kernels/_bilinear.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
