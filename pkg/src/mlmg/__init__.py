"""Multi-label learning with missing labels over a mixed dependency graph."""

__version__ = "0.1.0"
