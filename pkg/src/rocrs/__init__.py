"""Random-order contention resolution schemes and their applications."""

__version__ = "0.1.0"
