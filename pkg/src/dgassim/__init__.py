"""Cycle-approximate simulator of a barrel-threaded graph-analytics machine."""

__version__ = "0.1.0"
