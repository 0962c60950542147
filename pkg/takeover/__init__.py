"""Car-following takeover lab: platoons, the takeover model, calibration and control-unit training."""

__version__ = "0.1.0"
