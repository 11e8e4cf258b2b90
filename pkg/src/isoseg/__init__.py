"""Volumetric tissue segmentation with 3D FC-DenseNets and F-beta losses."""

__version__ = "0.1.0"
