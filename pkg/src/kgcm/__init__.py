"""Knowledge-guided cross-modal traffic demand forecasting."""

__version__ = "0.1.0"
