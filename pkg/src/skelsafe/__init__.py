"""Selective prediction and uncertainty under domain shift for skeleton action recognition."""
__version__ = "0.1.0"
