"""Adapters that put generators and measurement models behind line protocols."""

__version__ = "0.1.0"
