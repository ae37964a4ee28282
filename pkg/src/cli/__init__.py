"""Command-line entry point (``symlab``)."""
