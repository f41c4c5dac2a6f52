"""Top-down proposal sampling and verification for monocular 3D detection."""

__version__ = "0.1.0"
