"""Particle simulation and contraction diagnostics for mean-field dynamics with common noise."""
from __future__ import annotations

__version__ = "0.1.0"
