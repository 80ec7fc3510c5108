"""Equity-driven bus line design."""
