"""Differentiable finite-time Lyapunov exponents for feed-forward maps:
spectrum estimation, chaotic attractor synthesis, and an online
regime-shift benchmark with a largest-exponent regularizer."""

__version__ = "0.1.0"

from . import lorenz, lyapunov, network, scalar_ad, training, vector_ad  # noqa: F401
