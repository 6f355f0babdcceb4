"""Toolkit for deconstructing performance style from note-event data."""

__version__ = "0.1.0"
