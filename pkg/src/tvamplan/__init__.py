"""Illumination-plan optimisation for tomographic volumetric printing."""

__version__ = "0.1.0"
