"""Workbench for phase-only grating implementations of linear operations on
discrete optical spatial modes: synthesis, scalar-diffraction simulation,
calibration, and photon-counting quantum experiments in silico."""

__version__ = "0.1.0"

from . import calib, modes, optsim, qops, serialize, synthesis, tomo

__all__ = ["modes", "synthesis", "optsim", "calib", "qops", "tomo", "serialize"]
