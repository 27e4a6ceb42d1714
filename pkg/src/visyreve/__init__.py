"""Real-time novel view synthesis and pose-coverage analysis for
vision-based navigation datasets."""

__version__ = "0.1.0"
