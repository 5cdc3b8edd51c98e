"""Glaucoma classification from optic-nerve-head point clouds with PointNet and DGCNN."""

__version__ = "0.1.0"
