"""Learned triage of static memory-safety warnings with budgeted fuzzing."""

__version__ = "0.1.0"
