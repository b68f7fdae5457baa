"""Simulation toolkit for exchange-only spin qubits in double quantum dots.

Subpackages follow the physics from the bottom up: :mod:`hubbard` (two-site
Hubbard exchange), :mod:`barrier` (WKB tunnel coupling), :mod:`device`
(gate voltages, contours, stability maps, calibration), :mod:`noise`
(charge noise and insensitivity), :mod:`experiment` (synthetic
measurements) and :mod:`cli`.
"""

__version__ = "0.1.0"
