"""Occlusion-ordered semantic instance segmentation as CRF labeling."""

__version__ = "0.1.0"
