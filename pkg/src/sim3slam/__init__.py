"""Sim(3) pose-graph SLAM backend with a synthetic two-view frontend.

Submodules: sim3 (group algebra), two_view (model post-processing and loss
diagnostics), frontend (scene/measurement simulator), scale (relative-scale
WLS), graph (two-edge-type pose graph), optim (Levenberg-Marquardt), fusion
(global pointcloud), evaluation (alignment/ATE/reconstruction metrics),
pipeline + experiments (end-to-end runs and ablations), cli.
"""

from .sim3 import RotationNearPi, Sim3, Tangent7, exp_sim3, log_sim3

__all__ = ["RotationNearPi", "Sim3", "Tangent7", "exp_sim3", "log_sim3"]
__version__ = "0.1.0"
