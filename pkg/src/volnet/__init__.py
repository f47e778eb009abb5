"""Time-distributed 3D CNN + recurrent classifiers for 4D fMRI volumes."""

__version__ = "0.1.0"
