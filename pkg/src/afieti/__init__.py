"""All-floating tearing-and-interconnecting solvers for multi-patch
isogeometric linear elasticity with fast-diagonalization local solvers."""

__version__ = "0.1.0"
