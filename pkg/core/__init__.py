"""Core app package init."""
