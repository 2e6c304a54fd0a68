"""Reservoir computing with input-noise regularization on chaotic benchmarks.

Modules: ``dynsys`` (Mackey-Glass and Kuramoto-Sivashinsky data), ``reservoir``
(echo state network), ``metrics`` (forecast and climate scores), ``hyperopt``
(surrogate search), ``harness`` (noise sweeps and reports).
"""

__version__ = "0.1.0"
