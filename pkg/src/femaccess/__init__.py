"""Simulated robotic femoral vascular access: scan, track, reconstruct, plan, insert."""

__version__ = "0.1.0"
