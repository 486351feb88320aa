"""Receding-horizon energy management for a shipboard MVDC power system.

A generator module (PGM) and a battery power-conversion module (PCM) share a
pulsed load. Every EMS period a condensed quadratic program splits the
forecast load between them under ramp and box limits, either centrally
(:mod:`helmsman.qpsolve`) or by ADMM (:mod:`helmsman.admm`). The closed loop,
degradation accounting and the noise/target-SoC sweep build on those.
"""

__version__ = "0.1.0"
