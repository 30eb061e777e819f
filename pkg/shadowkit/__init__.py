"""Single-image shadow detection: structured edge CNN plus shadow optimization."""

__version__ = '0.1.0'
