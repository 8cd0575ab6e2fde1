"""MPJPE and reconstruction error (MPJPE after similarity alignment)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .diffcore import split_params
from .errors import DegenerateAlignmentError, InvalidInputError, ShapeError
from .kinematics import SkeletonModel, fk_batch

MM = 1000.0  # skeleton units -> "mm-equivalent"


def procrustes_align(A, B):
    """Similarity transform ``(scale, R, t)`` minimizing ``sum ||s R A_j + t - B_j||^2``.

    Returns ``(scale, rotation, translation, aligned_A)``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[1] != 3:
        raise ShapeError(f"point sets must both be (k, 3), got {A.shape} and {B.shape}")
    if A.shape[0] < 3:
        raise DegenerateAlignmentError("need at least 3 points for alignment")
    s, R, t, aligned = procrustes_align_batch(A[None], B[None])
    return float(s[0]), R[0], t[0], aligned[0]


def procrustes_align_batch(A, B, rank_tol=1e-10):
    """Batched Umeyama alignment of ``(F, k, 3)`` sets ``A`` onto ``B``."""
    muA = A.mean(1, keepdims=True)
    muB = B.mean(1, keepdims=True)
    a, b = A - muA, B - muB
    varA = (a * a).sum((1, 2))
    cov = np.swapaxes(b, 1, 2) @ a  # (F, 3, 3), B^T A
    U, S, Vt = np.linalg.svd(cov)
    if np.any(varA <= rank_tol) or np.any(S[:, 1] <= rank_tol * np.maximum(S[:, 0], 1.0)):
        raise DegenerateAlignmentError("point configuration is rank deficient")
    d = np.sign(np.linalg.det(U @ Vt))
    d[d == 0] = 1.0
    U[:, :, 2] *= d[:, None]
    S = S.copy()
    S[:, 2] *= d
    R = U @ Vt
    scale = S.sum(1) / varA
    t = muB[:, 0] - scale[:, None] * (R @ muA[:, 0, :, None])[..., 0]
    aligned = scale[:, None, None] * (A @ np.swapaxes(R, 1, 2)) + t[:, None, :]
    return scale, R, t, aligned


def mpjpe(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"joint sets differ in shape: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def pa_mpjpe(pred, gt) -> float:
    return mpjpe(procrustes_align(pred, gt)[3], gt)


def mpjpe_batch(pred, gt):
    return np.linalg.norm(pred - gt, axis=-1).mean(-1)


def pa_mpjpe_batch(pred, gt):
    return mpjpe_batch(procrustes_align_batch(pred, gt)[3], gt)


def joints_from_params(model: SkeletonModel, params):
    """Root-relative 3D joints of ``(..., P)`` parameter vectors (camera ignored)."""
    params = np.asarray(params, dtype=np.float64)
    lead = params.shape[:-1]
    flat = params.reshape(-1, params.shape[-1])
    theta, beta = split_params(flat, model)[:2]
    return fk_batch(model, theta, beta).reshape(lead + (model.joint_count, 3))


@dataclass
class EvalReport:
    """Per-frame and aggregate errors, in mm-equivalent units."""

    mpjpe: np.ndarray
    pa_mpjpe: np.ndarray
    curve_mpjpe: np.ndarray = field(default_factory=lambda: np.zeros(0))
    curve_pa_mpjpe: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def mean_mpjpe(self):
        return float(self.mpjpe.mean())

    @property
    def mean_pa_mpjpe(self):
        return float(self.pa_mpjpe.mean())

    @property
    def median_mpjpe(self):
        return float(np.median(self.mpjpe))

    @property
    def median_pa_mpjpe(self):
        return float(np.median(self.pa_mpjpe))

    def summary(self) -> str:
        lines = [
            f"frames: {len(self.mpjpe)}",
            f"MPJPE (mm-equivalent): mean {self.mean_mpjpe:.2f}, median {self.median_mpjpe:.2f}",
            f"PA-MPJPE (mm-equivalent): mean {self.mean_pa_mpjpe:.2f}, median {self.median_pa_mpjpe:.2f}",
        ]
        if len(self.curve_pa_mpjpe):
            curve = ", ".join(f"{v:.2f}" for v in self.curve_pa_mpjpe)
            lines.append(f"PA-MPJPE per iteration: {curve}")
        return "\n".join(lines)

    def write_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["frame", "mpjpe_mm", "pa_mpjpe_mm"])
            for i, (a, b) in enumerate(zip(self.mpjpe, self.pa_mpjpe)):
                w.writerow([i, repr(float(a)), repr(float(b))])


def evaluate(model: SkeletonModel, predictions, ground_truth) -> EvalReport:
    """Score fitted parameters against ground-truth parameters.

    ``predictions`` is ``(F, P)`` final estimates, ``(F, I, P)`` per-iteration
    estimates (the last one is scored per frame), or a sequence of fit traces.
    ``ground_truth`` is ``(F, P)``.
    """
    if len(predictions) == 0:
        raise InvalidInputError("nothing to evaluate")
    if hasattr(predictions[0], "states"):
        predictions = np.stack([np.asarray(tr.states) for tr in predictions])
    pred = np.asarray(predictions, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    if pred.ndim == 2:
        pred = pred[:, None]
    if pred.shape[0] != gt.shape[0]:
        raise ShapeError("predictions and ground truth differ in frame count")
    F, I = pred.shape[:2]
    gt_j = joints_from_params(model, gt)
    pred_j = joints_from_params(model, pred)
    rep_gt = np.repeat(gt_j[:, None], I, 1).reshape(F * I, -1, 3)
    flat_pred = pred_j.reshape(F * I, -1, 3)
    err = (MM * mpjpe_batch(flat_pred, rep_gt)).reshape(F, I)
    pa = (MM * pa_mpjpe_batch(flat_pred, rep_gt)).reshape(F, I)
    return EvalReport(err[:, -1], pa[:, -1], err.mean(0), pa.mean(0))
