"""Phragmén-Lindelöf growth/decay dichotomy for Zaremba problems in funnel domains."""

__version__ = "0.1.0"
