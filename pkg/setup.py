import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "sympcool._kernel",
                ["src/sympcool/_kernel.pyx"],
                include_dirs=[numpy.get_include()],
                # fp-contract off: no FMA fusion, so the compiled kernel
                # rounds every operation exactly like the NumPy twin and
                # the two backends stay bitwise interchangeable.
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=extensions)
