"""Gendered-noun translation accuracy under NMT decoding speed-ups."""

__version__ = "0.1.0"
