"""View-consistent multi-view editing of 3D Gaussian scenes."""

__version__ = "0.1.0"
