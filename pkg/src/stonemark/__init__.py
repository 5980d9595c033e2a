"""Syntax-aware watermarking for generated code, with detection and STEM scoring."""
__version__ = "0.1.0"
