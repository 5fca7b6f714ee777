"""Classical and recurrent forecasters with a reproducible evaluation harness."""

__version__ = "0.1.0"
