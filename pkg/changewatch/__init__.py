# Change-point detection and fault diagnosis with Gaussian graphical mixtures
__version__ = "0.1.0"
