"""Single-image category-level 6D pose and canonical point-cloud reconstruction."""

__version__ = "0.1.0"
