"""Early radio-link-failure warning engine and benchmark harness."""

__version__ = "0.1.0"
