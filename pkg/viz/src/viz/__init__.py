"""Offline plots for exported run records, field dumps and summary CSVs."""

from .plot import PlotSpec, SchemaMismatchError, plot

__version__ = "0.1.0"
