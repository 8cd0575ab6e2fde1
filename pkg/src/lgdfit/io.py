"""File formats: pose datasets (binary), keypoint frames (JSON lines), fit outputs."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .diffcore import Keypoints2D
from .errors import DataError
from .kinematics import NUM_BETAS, NUM_JOINTS

POSE_MAGIC = b"LGDPOSE\x00"
POSE_VERSION = 1
POSE_RECORD_DIM = 3 * (NUM_JOINTS - 1) + NUM_BETAS


def save_pose_dataset(path, records, skeleton_name, seed):
    """Header (magic, version, JSON: skeleton, count, seed) then ``(n, 79)`` little-endian f64."""
    records = np.asarray(records, dtype=np.float64).reshape(-1, POSE_RECORD_DIM)
    header = json.dumps({
        "version": POSE_VERSION,
        "skeleton": skeleton_name,
        "count": len(records),
        "seed": int(seed),
        "record_dim": POSE_RECORD_DIM,
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(POSE_MAGIC)
        fh.write(struct.pack("<II", POSE_VERSION, len(header)))
        fh.write(header)
        fh.write(records.astype("<f8").tobytes())


def load_pose_dataset(path):
    """Returns ``(records (n, 79), header dict)``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read pose dataset {path}: {exc}") from exc
    if data[:8] != POSE_MAGIC:
        raise DataError(f"{path} is not a pose dataset")
    version, n = struct.unpack("<II", data[8:16])
    if version != POSE_VERSION:
        raise DataError(f"unsupported pose dataset version {version}")
    header = json.loads(data[16:16 + n])
    body = np.frombuffer(data[16 + n:], dtype="<f8")
    dim = header.get("record_dim", POSE_RECORD_DIM)
    if dim != POSE_RECORD_DIM or body.size != header["count"] * dim:
        raise DataError(f"pose dataset body holds {body.size} values, header promises {header['count']} x {dim}")
    return body.reshape(header["count"], dim).astype(np.float64), header


def format_keypoint_line(frame, target: Keypoints2D) -> str:
    kps = [[float(u), float(v), int(vis)] for (u, v), vis in zip(target.points, target.visibility)]
    return json.dumps({"frame": frame, "keypoints": kps})


def write_keypoints(path, frames):
    """``frames``: iterable of ``(frame_id, Keypoints2D)``."""
    with open(path, "w") as fh:
        for frame, target in frames:
            fh.write(format_keypoint_line(frame, target) + "\n")


def parse_keypoint_line(line, lineno=None, n_joints=NUM_JOINTS):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc.msg}", line=lineno) from exc
    if not isinstance(rec, dict) or "frame" not in rec or "keypoints" not in rec:
        raise DataError("record needs 'frame' and 'keypoints'", line=lineno)
    try:
        arr = np.asarray(rec["keypoints"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError("keypoints must be numeric triples", line=lineno) from exc
    if arr.shape != (n_joints, 3):
        raise DataError(f"expected {n_joints} (u, v, visible) triples, got shape {arr.shape}", line=lineno)
    if not np.all(np.isfinite(arr)) or not np.all(np.isin(arr[:, 2], (0.0, 1.0))):
        raise DataError("coordinates must be finite and visibility 0 or 1", line=lineno)
    return rec["frame"], Keypoints2D(arr[:, :2], arr[:, 2] > 0)


def read_keypoints(path, n_joints=NUM_JOINTS):
    """List of ``(frame_id, Keypoints2D)``; blank lines are ignored."""
    frames = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read keypoints {path}: {exc}") from exc
    for i, line in enumerate(lines, start=1):
        if line.strip():
            frames.append(parse_keypoint_line(line, i, n_joints))
    return frames


def write_fit_results(path, rows):
    """One JSON line per frame: ``frame``, ``status`` and, when fitted, ``params``/``final_loss``."""
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def read_fit_results(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_metrics_csv(path, rows, seed):
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(["step", "train_loss", "heldout_pa_mpjpe", "wall_ms"])
        for r in rows:
            w.writerow([r["step"], repr(r["train_loss"]), repr(r["heldout_pa_mpjpe"]), f"{r['wall_ms']:.1f}"])
