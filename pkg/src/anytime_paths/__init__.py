"""Graph analysis, path sampling and toy training for anytime neural networks."""

__version__ = "0.1.0"
