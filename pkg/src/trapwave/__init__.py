"""Scattering matrices and trapped modes for waveguide junctions and gratings."""
__version__ = "0.1.0"
