"""Co-occurrence relation modelling for multi-label temporal action localization."""

__version__ = "0.1.0"
