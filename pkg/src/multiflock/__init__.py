"""Multi-species collective dynamics: alignment swarms, aggregation,
weighted-Laplacian connectivity, and critical-threshold diagnostics."""

from . import aggregate, hydro1d, kernels, spectral, swarm, threshold2d

__all__ = ["aggregate", "hydro1d", "kernels", "spectral", "swarm", "threshold2d"]
__version__ = "0.1.0"
