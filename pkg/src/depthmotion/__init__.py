"""Self-supervised depth and 3D motion-field estimation on synthetic scenes."""

__version__ = "0.1.0"
