"""Transformer-based retyping and renaming of variables in decompiled code."""

__version__ = "0.1.0"
