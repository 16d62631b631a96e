"""Desk-scale surrogate benchmark for a discrete YOLO-style architecture space."""

__version__ = "0.1.0"
