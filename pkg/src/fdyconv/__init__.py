"""Frequency dynamic convolution: numerical library, CLI and verification suites."""

__version__ = "0.1.0"
