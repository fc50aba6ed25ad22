"""Wait maps and control allocation for a latency-impaired remotely piloted aircraft."""

__version__ = "0.1.0"
