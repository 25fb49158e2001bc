"""Utility modules for the stability probe."""
