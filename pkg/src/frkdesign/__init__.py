"""Fixed rank kriging over basic areal units with adaptive sensor placement.

Submodules: ``geometry`` (BAU lattice, blocks, risk), ``gpsim`` (Gaussian
field simulation and kriging), ``basis`` (bisquare multiresolution basis),
``frk`` (observations, EM fitting, prediction), ``design`` (greedy adaptive
sampling), ``metrics`` (scores) and ``harness`` (experiments).
"""
from .exceptions import DomainError, NumericalError

__version__ = "0.1.0"
__all__ = ["DomainError", "NumericalError", "__version__"]
