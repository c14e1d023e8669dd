"""Recognise and undo in-plane orientation changes in cardiac MR volumes."""

__version__ = "0.1.0"
