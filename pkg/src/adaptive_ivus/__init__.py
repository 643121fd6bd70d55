"""Learned adaptive K-of-N element-pair subsampling for circular-array intravascular ultrasound."""

__version__ = "0.1.0"
