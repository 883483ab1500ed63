"""Online multi-target tracking with the HISP filter."""

__version__ = "0.1.0"
