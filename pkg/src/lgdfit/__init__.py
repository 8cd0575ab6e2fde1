"""Learned gradient descent for fitting an articulated body model to 2D keypoints."""

from .camera import CameraParams, project
from .diffcore import Keypoints2D, ModelParams, reproj_grad, reproj_loss
from .fitter import fit_direct_lifting, fit_learned, fit_vanilla_gd
from .kinematics import PoseShape, SkeletonModel, default_skeleton, forward_kinematics
from .metrics import evaluate, mpjpe, pa_mpjpe, procrustes_align
from .trainer import TrainConfig, train
from .updatenet import UpdateNetwork, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CameraParams", "Keypoints2D", "ModelParams", "PoseShape", "SkeletonModel", "TrainConfig",
    "UpdateNetwork", "default_skeleton", "evaluate", "fit_direct_lifting", "fit_learned",
    "fit_vanilla_gd", "forward_kinematics", "load_checkpoint", "mpjpe", "pa_mpjpe",
    "procrustes_align", "project", "reproj_grad", "reproj_loss", "save_checkpoint", "train",
]
