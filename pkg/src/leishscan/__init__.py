"""Counting macrophages and Leishmania parasites in fluorescence images."""

__version__ = "0.1.0"
