"""Label-free governance drift monitoring for risk decision systems."""

__version__ = "0.1.0"
