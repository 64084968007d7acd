"""Joint estimation of spatiotemporal reproduction numbers and connectivity graphs."""

__version__ = "0.1.0"
