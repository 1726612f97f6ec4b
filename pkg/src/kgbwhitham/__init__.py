"""Pseudospectral laboratory for the Whitham approximation of the
Klein-Gordon-Boussinesq system."""

__version__ = "0.1.0"
