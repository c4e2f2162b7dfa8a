"""fxbook: synthetic Excel-formula tutorial generation, validation, and
execution-match evaluation."""

__version__ = "0.1.0"
