"""Numerical laboratory for adiabatic linear response of 1d lattice fermions."""

__version__ = "0.1.0"

from ._kernels import HAVE_EXT  # noqa: F401
