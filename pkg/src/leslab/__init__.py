"""Numerical laboratory for local energy solutions of Navier-Stokes on ball covers."""
__version__ = "0.1.0"
