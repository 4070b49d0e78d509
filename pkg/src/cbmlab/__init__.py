"""Particle-consensus min-max solver and its propagation-of-chaos test bench."""

from __future__ import annotations

__version__ = "0.1.0"
