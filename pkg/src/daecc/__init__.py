"""Speculative decoupled access/execute compiler passes and simulator."""

__version__ = "0.1.0"
