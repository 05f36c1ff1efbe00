"""Motion capture from monocular LiDAR point cloud sequences."""

__version__ = "0.1.0"
