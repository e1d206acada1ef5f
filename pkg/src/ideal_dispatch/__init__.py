"""Selective dual dispatch of emergency vehicles under learned, correlated travel-time uncertainty."""

__version__ = "0.1.0"
