"""Weighted likelihood estimation under two-phase stratified sampling."""

__version__ = "0.1.0"
