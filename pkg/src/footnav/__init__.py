"""Dual foot-mounted IMU pedestrian navigation toolkit."""

__version__ = "0.1.0"
