"""Scene-graph driven compiler and evaluation toolkit for object-removal datasets."""

__version__ = "0.1.0"
