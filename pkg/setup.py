import os

from setuptools import setup

# The compiled kernels are optional: the package falls back to the numpy
# implementations when the extension is missing.  SSODSIM_SKIP_EXT=1 forces
# a pure-Python build.
ext_modules = []
if os.environ.get("SSODSIM_SKIP_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "ssodsim.kernels._fast",
                    ["src/ssodsim/kernels/_fast.pyx"],
                    include_dirs=[numpy.get_include()],
                    # -ffp-contract=off keeps mul+add rounding identical to
                    # the numpy reference (no FMA fusion)
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
