"""Numerical verification of conservation laws for polyharmonic maps.

Maps are sampled on periodic grids; the subpackages compute k-energies and
k-tension fields, Noether currents and stress-energy tensors, extrinsic
sphere identities, hypersurface invariants, and gradient flows.
"""

from .grid import DomainGrid
from .map_calculus import BITENSION_SIGN, SIGMA, GridMap, SphereTarget, ChartTarget, k_energy, k_tension
from .report import ResidualReport

__version__ = "0.1.0"

__all__ = [
    "BITENSION_SIGN",
    "ChartTarget",
    "DomainGrid",
    "GridMap",
    "ResidualReport",
    "SIGMA",
    "SphereTarget",
    "k_energy",
    "k_tension",
]
