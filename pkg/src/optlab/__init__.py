"""optlab: a seeded laboratory for stochastic optimization methods."""
__version__ = "0.1.0"
