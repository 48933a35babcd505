"""Synthesis-aware evaluation and decoding for multi-document summarization."""

__version__ = "0.1.0"
