"""Low-cost PM2.5 sensor network pipeline for wildfire smoke episodes."""

__version__ = "0.1.0"
