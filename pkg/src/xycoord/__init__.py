"""Coordinate-channel augmentation for convolutional digit classifiers, on a numpy NN core."""

__version__ = "0.1.0"
