"""Dance motion retargeting and closed-loop execution for floating-base humanoids."""

__version__ = "0.1.0"
