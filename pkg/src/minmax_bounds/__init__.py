"""Certified lower bounds for discounted min-max control with input constraints.

The pipeline: unconstrained H-infinity-type value matrices (hinf), semidefinite
relaxations and their mechanical duals (lmi), bound assembly and alternating
optimization with region verification (bounds), and simulation / brute-force
oracles (sim).  See README.md for the command-line interface.
"""

from .config import DEFAULT_TOLERANCES, Tolerances

__version__ = "0.1.0"

__all__ = ["DEFAULT_TOLERANCES", "Tolerances", "__version__"]
