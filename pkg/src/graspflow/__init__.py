"""Conditional flow matching that turns rigid-gripper grasps into soft-gripper grasps.

Everything runs on numpy: a small reverse-mode autodiff core, the velocity
net, an adaptive Dormand-Prince integrator, a depth-image autoencoder, a
procedural scene generator with a correction oracle, and a geometric success
oracle for seen and unseen object templates.
"""

from .config import RunConfig
from .evaluation import ModelBundle, SuccessCriteria, evaluate, success_oracle
from .ode import IntegratorConfig, integrate_flow
from .pose import GraspPose
from .velocity import TrainConfig, VelocityNet, fit

__all__ = ["GraspPose", "IntegratorConfig", "ModelBundle", "RunConfig", "SuccessCriteria", "TrainConfig",
           "VelocityNet", "evaluate", "fit", "integrate_flow", "success_oracle"]
__version__ = "0.1.0"
