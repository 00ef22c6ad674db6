"""Joint phase, Doppler and Doppler-rate estimation with LDPC decoding for a
distributed receiver: per-node particle-filter or random-walk estimators feed a
shared sum-product decoder."""

from .kernels import BACKEND, HAVE_COMPILED

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAVE_COMPILED", "__version__"]
