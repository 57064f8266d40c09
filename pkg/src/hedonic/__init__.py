"""Equilibrium, smooth-equilibrium and identification tools for discrete hedonic markets."""
__version__ = "0.1.0"
