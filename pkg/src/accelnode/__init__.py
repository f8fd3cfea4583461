"""accelnode: co-design toolkit for a multi-card inference accelerator node."""

__version__ = "0.1.0"
