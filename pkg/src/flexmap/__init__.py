"""flexmap: aggregated P/Q flexibility regions of radial distribution networks.

The library assembles a linear inequality description of every feasible
DER redispatch around a solved operating point and projects it onto the
interface power plane by Fourier-Motzkin elimination. Companion methods
(participation-factor restriction, Minkowski capability sum, Monte Carlo
reference sampling) and region metrics support systematic comparison.
"""

from .errors import FlexmapError

__version__ = "0.1.0"

__all__ = ["FlexmapError", "__version__"]
