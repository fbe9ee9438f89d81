"""Geotechnical observation server: borehole entity store, query engine, and test reductions."""

__version__ = "0.1.0"
