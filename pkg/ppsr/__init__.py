"""Privacy-preserving socialized recommendation toolkit."""

__version__ = "0.1.0"
