"""Configuration loading and report writers."""
