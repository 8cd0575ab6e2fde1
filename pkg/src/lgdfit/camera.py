"""Weak-perspective camera: rotate, drop depth, scale, shift."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidCameraError
from .kinematics import rodrigues


@dataclass
class CameraParams:
    rotation: np.ndarray  # axis-angle, 3
    translation: np.ndarray  # 2, normalized image units
    scale: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(2)
        self.scale = float(self.scale)
        if not (np.all(np.isfinite(self.rotation)) and np.all(np.isfinite(self.translation))
                and np.isfinite(self.scale)):
            raise InvalidCameraError("camera parameters must be finite")
        if self.scale <= 0:
            raise InvalidCameraError(f"camera scale must be positive, got {self.scale}")

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.zeros(2), 1.0)


def project_batch(X, rotation, translation, scale):
    """Unchecked projection of ``(B, k, 3)`` joints; camera arrays are batched.

    Used inside optimizers, where the scale is a free variable and may pass
    through zero.
    """
    Y = np.einsum("bij,bkj->bki", rodrigues(rotation), X)
    return scale[:, None, None] * Y[..., :2] + translation[:, None, :]


def project(X, cam: CameraParams) -> np.ndarray:
    """Project ``(k, 3)`` joints to ``(k, 2)`` image points."""
    if cam.scale <= 0:
        raise InvalidCameraError(f"camera scale must be positive, got {cam.scale}")
    X = np.asarray(X, dtype=np.float64)
    return cam.scale * (X @ rodrigues(cam.rotation).T)[:, :2] + cam.translation
