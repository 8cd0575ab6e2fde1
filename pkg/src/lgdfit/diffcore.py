"""Reprojection loss over the flat parameter vector, and its exact gradient.

Flat layout (default skeleton): ``[theta (69), beta (10), R (3), t (2), s (1)]``.
The gradient is a hand-written reverse pass over the fixed graph
FK -> global rotation -> orthographic drop -> scale/shift -> mean squared error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraParams
from .errors import DegenerateTargetError, InvalidInputError, ShapeError
from .kinematics import (
    NUM_BETAS,
    NUM_JOINTS,
    PoseShape,
    SkeletonModel,
    fk_batch,
    fk_batch_vjp,
    rodrigues,
    rodrigues_vjp,
)

N_POSE = 3 * (NUM_JOINTS - 1)
PARAM_DIM = N_POSE + NUM_BETAS + 6
THETA = slice(0, N_POSE)
BETA = slice(N_POSE, N_POSE + NUM_BETAS)
ROT = slice(N_POSE + NUM_BETAS, N_POSE + NUM_BETAS + 3)
TRANS = slice(N_POSE + NUM_BETAS + 3, N_POSE + NUM_BETAS + 5)
SCALE = PARAM_DIM - 1


def param_dim(model: SkeletonModel) -> int:
    return model.n_pose + model.n_betas + 6


def split_params(params, model: SkeletonModel):
    """Views ``(theta (B, J-1, 3), beta, rot, trans, scale)`` of ``(B, P)`` params."""
    P = param_dim(model)
    if params.shape[-1] != P:
        raise ShapeError(f"parameter vector must have length {P}, got {params.shape[-1]}")
    n_pose, n_beta = model.n_pose, model.n_betas
    theta = params[:, :n_pose].reshape(len(params), -1, 3)
    beta = params[:, n_pose:n_pose + n_beta]
    rot = params[:, n_pose + n_beta:n_pose + n_beta + 3]
    trans = params[:, n_pose + n_beta + 3:n_pose + n_beta + 5]
    return theta, beta, rot, trans, params[:, -1]


@dataclass
class ModelParams:
    """Full parameter vector being optimized.

    Optimizer states are unconstrained (``Θ_0 = 0`` has zero scale), so the
    positivity of the scale is only enforced when :meth:`camera` is asked for.
    """

    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if self.vector.shape != (PARAM_DIM,):
            raise ShapeError(f"ModelParams needs {PARAM_DIM} values, got {self.vector.shape[0]}")

    @classmethod
    def zeros(cls):
        return cls(np.zeros(PARAM_DIM))

    @classmethod
    def from_parts(cls, pose_shape: PoseShape, camera: CameraParams):
        return cls(np.concatenate([
            pose_shape.theta.reshape(-1), pose_shape.beta,
            camera.rotation, camera.translation, [camera.scale],
        ]))

    def flatten(self) -> np.ndarray:
        return self.vector.copy()

    @classmethod
    def unflatten(cls, vec):
        return cls(np.array(vec, dtype=np.float64))

    @property
    def theta(self):
        return self.vector[THETA].reshape(-1, 3)

    @property
    def beta(self):
        return self.vector[BETA]

    @property
    def rotation(self):
        return self.vector[ROT]

    @property
    def translation(self):
        return self.vector[TRANS]

    @property
    def scale(self):
        return float(self.vector[SCALE])

    @property
    def pose_shape(self) -> PoseShape:
        return PoseShape(self.theta, self.beta)

    def camera(self) -> CameraParams:
        return CameraParams(self.rotation, self.translation, self.scale)


@dataclass
class Keypoints2D:
    points: np.ndarray  # (k, 2)
    visibility: np.ndarray  # (k,) bool

    def __post_init__(self):
        self.points = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        self.visibility = np.asarray(self.visibility, dtype=bool).reshape(-1)
        if self.visibility.shape[0] != self.points.shape[0]:
            raise ShapeError("visibility length must match number of points")
        self.points[~self.visibility] = 0.0
        if not np.all(np.isfinite(self.points)):
            raise InvalidInputError("keypoints must be finite")

    @classmethod
    def all_visible(cls, points):
        points = np.asarray(points, dtype=np.float64)
        return cls(points, np.ones(len(points), dtype=bool))

    @property
    def n_visible(self) -> int:
        return int(self.visibility.sum())

    def to_flat(self) -> np.ndarray:
        """Per joint ``(u, v, visible)``, concatenated."""
        return np.concatenate([self.points, self.visibility[:, None].astype(np.float64)], 1).reshape(-1)


def loss_and_grad_batch(model: SkeletonModel, params, points, visible, with_grad=True):
    """Per-sample reprojection loss ``(B,)`` and gradient ``(B, P)``.

    ``visible`` may be boolean or 0/1 floats; invisible joints contribute
    nothing to either output.
    """
    params = np.asarray(params, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    w = np.asarray(visible, dtype=np.float64)
    if points.shape != (len(params), model.joint_count, 2) or w.shape != points.shape[:2]:
        raise ShapeError("targets must be (B, J, 2) with (B, J) visibility")
    m = w.sum(1)
    if np.any(m <= 0):
        raise DegenerateTargetError("target has no visible joints")
    theta, beta, rot, trans, scale = split_params(params, model)

    B = len(params)
    aa = np.concatenate([theta, rot[:, None]], 1)
    rots = rodrigues(aa)
    Rg = rots[:, -1]
    X, cache = fk_batch(model, theta, beta, keep_cache=True, local_rots=rots[:, :-1])
    Y = X @ np.swapaxes(Rg, 1, 2)
    resid = (scale[:, None, None] * Y[..., :2] + trans[:, None, :] - points) * w[..., None]
    loss = np.einsum("bkc,bkc->b", resid, resid) / m
    if not with_grad:
        return loss, None

    dxhat = 2.0 * resid / m[:, None, None]
    grad = np.empty_like(params)
    n_pose, n_beta = model.n_pose, model.n_betas
    grad[:, -1] = np.einsum("bkc,bkc->b", dxhat, Y[..., :2])
    grad[:, n_pose + n_beta + 3:n_pose + n_beta + 5] = dxhat.sum(1)
    dY = np.zeros_like(Y)
    dY[..., :2] = scale[:, None, None] * dxhat
    dRg = np.swapaxes(dY, 1, 2) @ X
    dX = dY @ Rg
    dlocal, dbeta = fk_batch_vjp(model, cache, dX, with_theta=False)
    daa = rodrigues_vjp(aa, np.concatenate([dlocal, dRg[:, None]], 1))
    grad[:, :n_pose] = daa[:, :-1].reshape(B, -1)
    grad[:, n_pose + n_beta:n_pose + n_beta + 3] = daa[:, -1]
    grad[:, n_pose:n_pose + n_beta] = dbeta
    return loss, grad


def _single(theta: ModelParams, target: Keypoints2D, model, with_grad):
    vec = theta.vector if isinstance(theta, ModelParams) else np.asarray(theta, dtype=np.float64)
    loss, grad = loss_and_grad_batch(
        model, vec[None], target.points[None], target.visibility[None], with_grad=with_grad
    )
    return float(loss[0]), (None if grad is None else grad[0])


def reproj_loss(theta, target: Keypoints2D, model: SkeletonModel) -> float:
    """Mean squared 2D distance over visible joints."""
    return _single(theta, target, model, with_grad=False)[0]


def reproj_grad(theta, target: Keypoints2D, model: SkeletonModel) -> np.ndarray:
    return _single(theta, target, model, with_grad=True)[1]


def finite_diff_grad(theta, target: Keypoints2D, model: SkeletonModel, step=1e-5, loss_fn=None):
    """Central-difference gradient, two loss evaluations per coordinate (test oracle).

    ``loss_fn`` defaults to :func:`reproj_loss`; any ``f(vector) -> float``
    may be substituted.
    """
    if not step or not np.isfinite(step) or step <= 0:
        raise InvalidInputError(f"finite-difference step must be positive, got {step}")
    vec = theta.vector if isinstance(theta, ModelParams) else np.asarray(theta, dtype=np.float64)
    shifts = step * np.eye(len(vec))
    if loss_fn is None:
        # the reprojection loss alone, evaluated for all 2P shifted vectors at once
        stacked = np.concatenate([vec + shifts, vec - shifts])
        n = len(stacked)
        vals = loss_and_grad_batch(model, stacked, np.broadcast_to(target.points, (n,) + target.points.shape),
                                   np.broadcast_to(target.visibility.astype(np.float64), (n, len(target.points))),
                                   with_grad=False)[0]
        return (vals[:len(vec)] - vals[len(vec):]) / (2 * step)
    return np.array([(loss_fn(vec + d) - loss_fn(vec - d)) / (2 * step) for d in shifts])


def gradcheck_error(analytic, numeric) -> float:
    """``|analytic - numeric|_inf / (1 + |numeric|_inf)``."""
    return float(np.max(np.abs(analytic - numeric)) / (1.0 + np.max(np.abs(numeric))))
