"""Restoration-based, no-reference face image quality.

A generator restores a face toward a canonical high-quality rendition; the
quality of the input is the similarity between input and restoration.
"""

__version__ = "0.1.0"
