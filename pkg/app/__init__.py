"""Sensor Fusion Lab: адаптивное мультимодальное слияние смесью сверточных экспертов."""

__version__ = "1.0.0"
