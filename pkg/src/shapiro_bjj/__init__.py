"""Driven bosonic Josephson junctions: double-well calibration, two-mode and
Gross-Pitaevskii dynamics, Bessel effective couplings and resonance scans."""

__version__ = "0.1.0"
