"""Dynamic meta-learning recommender for time-sensitive cold-start users."""

__version__ = "0.1.0"
