"""Haar multi-resolution decomposition and the WavPool classifier, in numpy."""
from .wavelet import decompose, haar_filters_1d, haar_filters_2d, level_count, reconstruct

__version__ = "0.1.0"

__all__ = ["decompose", "haar_filters_1d", "haar_filters_2d", "level_count", "reconstruct"]
