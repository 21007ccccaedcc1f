import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off keeps the compiled sweep bit-identical to the Python fallback.
extensions = [
    Extension(
        "meshonet._sor",
        ["src/meshonet/_sor.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False, "cdivision": True},
    )
)
