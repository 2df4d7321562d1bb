"""Geodesic voxel features, covariance eigenfeatures and LDDMM tracking for 3D shapes."""

__version__ = "0.1.0"
