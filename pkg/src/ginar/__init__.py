"""GinAR: graph interpolation attention recursive network for forecasting with missing variables."""

__version__ = "0.1.0"
