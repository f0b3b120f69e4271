"""Location obfuscation under distance-dependent distinguishability."""

__version__ = "0.1.0"
