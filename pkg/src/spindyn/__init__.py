"""Classical spin simulations on crystals.

Symmetry-constrained model building, dipole and SU(N) spin dynamics, Monte
Carlo sampling, linear spin-wave theory and structure factors.
"""
__version__ = "0.1.0"
