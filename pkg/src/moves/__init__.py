"""Dynamic-to-static LiDAR range-image translation with a couple discriminator."""

from .core import PointCloud, Pose, RangeImage, SensorConfig, Trajectory, project, unproject

__all__ = ["PointCloud", "Pose", "RangeImage", "SensorConfig", "Trajectory", "project",
           "unproject"]
__version__ = "0.1.0"
