"""Quasi-interpolation with condensed diversified tensor-product B-splines on graph domains."""

__version__ = "0.1.0"
