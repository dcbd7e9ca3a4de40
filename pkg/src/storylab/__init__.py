"""Desk-scale laboratory for event-triggered, context-aware story generation."""

__version__ = "0.1.0"
