"""Joint activity detection and channel estimation toolkit."""
__version__ = "0.1.0"
