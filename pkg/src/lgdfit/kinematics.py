"""Articulated skeleton with direct joint forward kinematics.

The skeleton mirrors the 24-joint SMPL tree (root + 23 articulated joints),
but joints are produced directly by forward kinematics instead of being
regressed from a skinned mesh.  Rotation convention follows SMPL: the
axis-angle of joint ``j`` (``theta[j - 1]``) rotates every bone below ``j``,
so leaf rotations move no joint.  The root carries no rotation; global
orientation belongs to the camera.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidInputError, ShapeError

SKELETON_FORMAT_VERSION = 1
NUM_JOINTS = 24
NUM_BETAS = 10

SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

JOINT_NAMES = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar",
    "r_collar", "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hand", "r_hand",
)

# Rest-pose bone offsets (parent -> joint), roughly adult proportions, y up.
_REST_OFFSETS = (
    (0.0, 0.0, 0.0),
    (0.058, -0.082, -0.018),
    (-0.060, -0.091, -0.014),
    (0.004, 0.109, -0.027),
    (0.043, -0.375, 0.005),
    (-0.043, -0.383, -0.005),
    (0.005, 0.135, 0.002),
    (-0.015, -0.398, -0.042),
    (0.019, -0.392, -0.038),
    (0.000, 0.053, 0.027),
    (0.041, -0.056, 0.123),
    (-0.035, -0.063, 0.125),
    (-0.013, 0.214, -0.033),
    (0.072, 0.121, -0.034),
    (-0.083, 0.119, -0.039),
    (0.010, 0.089, 0.050),
    (0.123, 0.045, -0.019),
    (-0.113, 0.047, -0.008),
    (0.255, -0.016, -0.023),
    (-0.260, -0.014, -0.031),
    (0.266, 0.009, -0.006),
    (-0.269, -0.007, -0.006),
    (0.087, -0.011, -0.016),
    (-0.089, -0.009, -0.010),
)

# Below this angle Rodrigues coefficients switch to their Taylor series.
SMALL_ANGLE = 1e-2


@dataclass(frozen=True, eq=False)
class SkeletonModel:
    """Kinematic tree, rest offsets and linear shape basis.

    ``shape_basis`` has shape ``(J, 3, n_betas)``: column ``k`` of joint ``j``
    is the offset change of bone ``parent(j) -> j`` per unit ``beta[k]``.
    """

    parents: np.ndarray
    template_offsets: np.ndarray
    shape_basis: np.ndarray
    name: str = "synthetic-smpl24"
    seed: int = 0
    levels: tuple = field(init=False, repr=False)
    subtree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = np.asarray(self.template_offsets, dtype=np.float64)
        basis = np.asarray(self.shape_basis, dtype=np.float64)
        J = len(parents)
        if J < 1 or parents[0] != -1:
            raise InvalidInputError("parents[0] must be -1 (root)")
        if np.any(parents[1:] < 0) or np.any(parents[1:] >= np.arange(1, J)):
            raise InvalidInputError("parents must satisfy 0 <= parent[j] < j for j > 0")
        if offsets.shape != (J, 3):
            raise ShapeError(f"template_offsets must be ({J}, 3), got {offsets.shape}")
        if basis.ndim != 3 or basis.shape[:2] != (J, 3):
            raise ShapeError(f"shape_basis must be ({J}, 3, K), got {basis.shape}")
        for arr in (parents, offsets, basis):
            arr.setflags(write=False)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "template_offsets", offsets)
        object.__setattr__(self, "shape_basis", basis)
        object.__setattr__(self, "levels", _tree_levels(parents))
        subtree = np.eye(J)
        for j in range(J - 1, 0, -1):
            subtree[parents[j]] += subtree[j]
        subtree.setflags(write=False)
        object.__setattr__(self, "subtree", subtree)

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def n_betas(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def n_pose(self) -> int:
        return 3 * (self.joint_count - 1)

    def bone_lengths(self, beta=None) -> np.ndarray:
        """Lengths of bones ``parent(j) -> j`` for j >= 1."""
        offs = self.offsets(beta)
        return np.linalg.norm(offs[1:], axis=-1)

    def offsets(self, beta=None) -> np.ndarray:
        if beta is None:
            return np.array(self.template_offsets)
        beta = np.asarray(beta, dtype=np.float64)
        return self.template_offsets + np.einsum("jkl,...l->...jk", self.shape_basis, beta)


def _tree_levels(parents):
    depth = np.zeros(len(parents), dtype=np.int64)
    for j in range(1, len(parents)):
        depth[j] = depth[parents[j]] + 1
    levels = []
    for d in range(1, int(depth.max(initial=0)) + 1):
        idx = np.flatnonzero(depth == d)
        levels.append((idx, parents[idx]))
    return tuple(levels)


def make_shape_basis(template_offsets, n_betas=NUM_BETAS, seed=0, rel_scale=0.02, beta_bound=3.0):
    """Random per-joint offset directions, one per shape coefficient.

    Each column has norm ``rel_scale`` times the mean bone length, capped so
    that any ``|beta|_inf <= beta_bound`` changes a bone by at most half its
    rest length (bones can never collapse).
    """
    offsets = np.asarray(template_offsets, dtype=np.float64)
    J = offsets.shape[0]
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((J, 3, n_betas))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    lengths = np.linalg.norm(offsets, axis=1)
    mean_len = lengths[1:].mean() if J > 1 else 0.0
    col_norm = np.minimum(rel_scale * mean_len, 0.5 * lengths / (beta_bound * n_betas))
    basis = dirs * col_norm[:, None, None]
    basis[0] = 0.0
    return basis


def default_skeleton(seed: int = 0) -> SkeletonModel:
    offsets = np.array(_REST_OFFSETS)
    return SkeletonModel(
        parents=np.array(SMPL_PARENTS),
        template_offsets=offsets,
        shape_basis=make_shape_basis(offsets, seed=seed),
        name="synthetic-smpl24",
        seed=seed,
    )


def save_skeleton(model: SkeletonModel, path) -> None:
    doc = {
        "format_version": SKELETON_FORMAT_VERSION,
        "name": model.name,
        "seed": int(model.seed),
        "joint_count": model.joint_count,
        "n_betas": model.n_betas,
        "parents": model.parents.tolist(),
        "template_offsets": model.template_offsets.tolist(),
        "shape_basis": model.shape_basis.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_skeleton(path) -> SkeletonModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read skeleton file {path}: {exc}") from exc
    if doc.get("format_version") != SKELETON_FORMAT_VERSION:
        raise DataError(f"unsupported skeleton format version {doc.get('format_version')!r}")
    model = SkeletonModel(
        parents=np.array(doc["parents"], dtype=np.int64),
        template_offsets=np.array(doc["template_offsets"], dtype=np.float64),
        shape_basis=np.array(doc["shape_basis"], dtype=np.float64),
        name=doc["name"],
        seed=doc["seed"],
    )
    if model.joint_count != doc["joint_count"] or model.n_betas != doc["n_betas"]:
        raise DataError("skeleton header does not match array sizes")
    return model


@dataclass
class PoseShape:
    """Articulation and shape: ``theta`` is ``(J-1, 3)``, ``beta`` ``(n_betas,)``.

    Sizes are checked against a skeleton when the pose is used; the default
    skeleton takes 23 x 3 pose and 10 shape values.
    """

    theta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1, 3)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.beta))):
            raise InvalidInputError("PoseShape contains non-finite values")

    @classmethod
    def zeros(cls):
        return cls(np.zeros((NUM_JOINTS - 1, 3)), np.zeros(NUM_BETAS))


def _hat(v):
    """Batched cross-product matrix of ``(..., 3)`` vectors."""
    K = np.zeros(v.shape + (3,))
    K[..., 0, 1] = -v[..., 2]
    K[..., 0, 2] = v[..., 1]
    K[..., 1, 0] = v[..., 2]
    K[..., 1, 2] = -v[..., 0]
    K[..., 2, 0] = -v[..., 1]
    K[..., 2, 1] = v[..., 0]
    return K


def _coeffs(angle, with_derivs=False):
    """``sin(a)/a``, ``(1-cos a)/a^2`` and optionally their d/da divided by a."""
    small = angle < SMALL_ANGLE
    a2 = angle * angle
    safe = np.where(small, 1.0, angle)
    s, c = np.sin(safe), np.cos(safe)
    A = np.where(small, 1 - a2 / 6 + a2 * a2 / 120 - a2**3 / 5040, s / safe)
    B = np.where(small, 0.5 - a2 / 24 + a2 * a2 / 720 - a2**3 / 40320, (1 - c) / safe**2)
    if not with_derivs:
        return A, B
    C = np.where(small, -1 / 3 + a2 / 30 - a2 * a2 / 840, (safe * c - s) / safe**3)
    D = np.where(small, -1 / 12 + a2 / 180 - a2 * a2 / 6720, (safe * s - 2 * (1 - c)) / safe**4)
    return A, B, C, D


def rodrigues(axis_angle) -> np.ndarray:
    """Rotation matrices for axis-angle vectors of shape ``(..., 3)``."""
    v = np.asarray(axis_angle, dtype=np.float64)
    if v.shape[-1:] != (3,):
        raise ShapeError(f"axis-angle must have trailing dimension 3, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("non-finite axis-angle")
    K = _hat(v)
    A, B = _coeffs(np.linalg.norm(v, axis=-1))
    return np.eye(3) + A[..., None, None] * K + B[..., None, None] * (K @ K)


def _skew_part(M):
    # u with <M, hat(w)> = u . w
    return np.stack(
        [M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0], M[..., 1, 0] - M[..., 0, 1]], -1
    )


def rodrigues_vjp(axis_angle, grad_rot) -> np.ndarray:
    """Pull a gradient w.r.t. rotation matrices back to the axis-angle vectors."""
    v = np.asarray(axis_angle, dtype=np.float64)
    K = _hat(v)
    A, B, C, D = _coeffs(np.linalg.norm(v, axis=-1), with_derivs=True)
    gK = grad_rot @ K
    # <g, K K> = trace(g^T K K) = <g K^T, K> = -<g K, K>
    radial = C * (grad_rot * K).sum((-1, -2)) - D * (gK * K).sum((-1, -2))
    return (
        radial[..., None] * v
        + A[..., None] * _skew_part(grad_rot)
        - B[..., None] * _skew_part(gK + K @ grad_rot)
    )


def rest_joints(model: SkeletonModel, beta) -> np.ndarray:
    """Rest-pose joint positions for shape ``beta``; batched over leading axes."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape[-1:] != (model.n_betas,):
        raise ShapeError(f"beta must have trailing dimension {model.n_betas}")
    if not np.all(np.isfinite(beta)):
        raise InvalidInputError("non-finite beta")
    offs = model.offsets(beta)
    X = np.zeros_like(offs)
    for idx, par in model.levels:
        X[..., idx, :] = X[..., par, :] + offs[..., idx, :]
    return X


def fk_batch(model: SkeletonModel, theta, beta, keep_cache=False, local_rots=None):
    """Forward kinematics for a batch.

    ``theta`` is ``(B, J-1, 3)``, ``beta`` is ``(B, n_betas)``.  Returns joints
    ``(B, J, 3)`` and, with ``keep_cache``, the intermediates needed by
    :func:`fk_batch_vjp`.  ``local_rots`` may carry ``rodrigues(theta)`` when
    the caller already has it.
    """
    B = theta.shape[0]
    J = model.joint_count
    offs = model.offsets(beta)
    local = np.empty((B, J, 3, 3))
    local[:, 0] = np.eye(3)
    local[:, 1:] = rodrigues(theta) if local_rots is None else local_rots
    G = np.empty((B, J, 3, 3))
    G[:, 0] = np.eye(3)
    X = np.zeros((B, J, 3))
    for idx, par in model.levels:
        X[:, idx] = X[:, par] + (G[:, par] @ offs[:, idx, :, None])[..., 0]
        G[:, idx] = G[:, par] @ local[:, idx]
    if keep_cache:
        return X, (theta, offs, local, G, X)
    return X


def fk_batch_vjp(model: SkeletonModel, cache, grad_joints, with_theta=True):
    """Reverse pass of :func:`fk_batch`: returns (grad_theta, grad_beta).

    With ``with_theta=False`` the first output is the gradient w.r.t. the
    local rotation matrices instead, so callers can batch the Rodrigues
    pullback with their own rotations.

    Rotating joint ``j`` moves its subtree rigidly about ``X_j``, so the
    gradient w.r.t. ``G_j`` is ``sum_{d in sub(j)} dX_d (X_d - X_j)^T G_j``.
    Subtree sums are one matrix product with the descendant indicator.
    """
    theta, offs, local, G, X = cache
    B, J = X.shape[:2]
    dX = np.asarray(grad_joints, dtype=np.float64)
    D = model.subtree
    sum_dX = D @ dX  # (B, J, 3)
    sum_outer = (D @ (dX[..., :, None] * X[..., None, :]).reshape(B, J, 9)).reshape(B, J, 3, 3)
    M = sum_outer[:, 1:] - sum_dX[:, 1:, :, None] * X[:, 1:, None, :]
    GpT = np.swapaxes(G[:, model.parents[1:]], -1, -2)
    dlocal = GpT @ M @ G[:, 1:]
    doffs = np.zeros((B, J, 3))
    doffs[:, 1:] = (GpT @ sum_dX[:, 1:, :, None])[..., 0]
    dbeta = doffs.reshape(B, -1) @ model.shape_basis.reshape(J * 3, -1)
    if not with_theta:
        return dlocal, dbeta
    return rodrigues_vjp(theta, dlocal), dbeta


def forward_kinematics(model: SkeletonModel, ps: PoseShape) -> np.ndarray:
    """Joint positions ``(J, 3)`` of one posed skeleton, root at the origin."""
    if ps.theta.shape[0] != model.joint_count - 1 or ps.beta.shape[0] != model.n_betas:
        raise ShapeError("PoseShape does not match skeleton")
    return fk_batch(model, ps.theta[None], ps.beta[None])[0]
