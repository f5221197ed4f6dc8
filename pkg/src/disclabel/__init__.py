"""Intervertebral disc keypoint detection on 2D sagittal images."""

__version__ = "0.1.0"
