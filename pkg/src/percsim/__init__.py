"""Learned image codec with a reusable analysis transform."""

__version__ = "0.1.0"
