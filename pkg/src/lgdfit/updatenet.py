"""Residual MLP that maps (gradient, current parameters, target) to an update.

Architecture: ``linear(in -> H)``, then ``n_blocks`` residual blocks
``h <- h + act(W h + b)``, then ``linear(H -> out)``.  The last layer starts at
zero, so an untrained network proposes no update at all.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffcore import PARAM_DIM, Keypoints2D
from .errors import DataError, InvalidStateError, ShapeError
from .kinematics import NUM_JOINTS

CHECKPOINT_MAGIC = b"LGDNET\x00\x01"
CHECKPOINT_VERSION = 1

TARGET_DIM = 3 * NUM_JOINTS
INPUT_DIM = 2 * PARAM_DIM + TARGET_DIM

GRAD = slice(0, PARAM_DIM)
STATE = slice(PARAM_DIM, 2 * PARAM_DIM)
TARGET = slice(2 * PARAM_DIM, INPUT_DIM)

ABLATION_MODES = ("full", "no_grad", "no_theta", "no_target", "target_only")
_KEEP = {
    "full": (True, True, True),
    "no_grad": (False, True, True),
    "no_theta": (True, False, True),
    "no_target": (True, True, False),
    "target_only": (False, False, True),
}


def channel_mask(mode: str) -> np.ndarray:
    """0/1 vector over the network input that keeps the channels of ``mode``."""
    if mode not in _KEEP:
        raise ValueError(f"unknown ablation mode {mode!r}; expected one of {ABLATION_MODES}")
    keep_grad, keep_theta, keep_target = _KEEP[mode]
    mask = np.zeros(INPUT_DIM)
    mask[GRAD] = keep_grad
    mask[STATE] = keep_theta
    mask[TARGET] = keep_target
    return mask


@dataclass
class NetInput:
    grad: np.ndarray
    theta_flat: np.ndarray
    target_flat: np.ndarray

    def concat(self) -> np.ndarray:
        return np.concatenate([self.grad, self.theta_flat, self.target_flat], axis=-1)

    @classmethod
    def build(cls, grad, theta, target: Keypoints2D):
        """Normalize the raw loss gradient and bundle the three channels."""
        grad = np.asarray(grad, dtype=np.float64)
        return cls(normalize_grad(grad), np.asarray(theta, dtype=np.float64), target.to_flat())


def normalize_grad(grad):
    """Scale each gradient row by ``1 / (1 + ||g||)``."""
    return grad / (1.0 + np.linalg.norm(grad, axis=-1, keepdims=True))


def target_features(points, visible):
    """Batched ``(u, v, visible)`` per joint, invisible coordinates zeroed."""
    w = np.asarray(visible, dtype=np.float64)
    feats = np.concatenate([points * w[..., None], w[..., None]], -1)
    return feats.reshape(len(points), -1)


def build_input_batch(grad, theta, points, visible):
    return np.concatenate([normalize_grad(grad), theta, target_features(points, visible)], 1)


def ablated_input(inp: NetInput, mode: str) -> NetInput:
    keep_grad, keep_theta, keep_target = _KEEP.get(mode, (None,) * 3)
    if keep_grad is None:
        raise ValueError(f"unknown ablation mode {mode!r}; expected one of {ABLATION_MODES}")
    return NetInput(
        inp.grad if keep_grad else np.zeros_like(inp.grad),
        inp.theta_flat if keep_theta else np.zeros_like(inp.theta_flat),
        inp.target_flat if keep_target else np.zeros_like(inp.target_flat),
    )


class UpdateNetwork:
    """Weights plus an architecture descriptor.

    ``params`` is the ordered list ``[W_in, b_in, (W_k, b_k)*n_blocks, W_out, b_out]``
    with weights stored input-major (``h @ W``).  ``version`` increments on
    every weight change so stale forward caches can be detected.
    """

    def __init__(self, input_dim=INPUT_DIM, hidden=256, n_blocks=2, output_dim=PARAM_DIM,
                 activation="relu", seed=0, params=None):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unsupported activation {activation!r}")
        self.input_dim = int(input_dim)
        self.hidden = int(hidden)
        self.n_blocks = int(n_blocks)
        self.output_dim = int(output_dim)
        self.activation = activation
        self.seed = int(seed)
        self.version = 0
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        shapes = self.param_shapes()
        if len(params) != len(shapes) or any(p.shape != s for p, s in zip(params, shapes)):
            raise ShapeError("parameter arrays do not match architecture")
        self.params = [np.array(p, dtype=np.float64) for p in params]

    def param_shapes(self):
        H = self.hidden
        shapes = [(self.input_dim, H), (H,)]
        for _ in range(self.n_blocks):
            shapes += [(H, H), (H,)]
        shapes += [(H, self.output_dim), (self.output_dim,)]
        return shapes

    def _init_params(self, rng):
        H = self.hidden
        params = [rng.standard_normal((self.input_dim, H)) * np.sqrt(1.0 / self.input_dim), np.zeros(H)]
        for _ in range(self.n_blocks):
            params += [rng.standard_normal((H, H)) * np.sqrt(2.0 / H), np.zeros(H)]
        params += [np.zeros((H, self.output_dim)), np.zeros(self.output_dim)]
        return params

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes())

    def flops(self) -> int:
        """Multiply-adds counted as two FLOPs, plus one per bias, activation and skip."""
        H = self.hidden
        total = 2 * self.input_dim * H + H
        total += self.n_blocks * (2 * H * H + H + H + H)
        total += 2 * H * self.output_dim + self.output_dim
        return total

    def descriptor(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": self.hidden,
            "n_blocks": self.n_blocks,
            "output_dim": self.output_dim,
            "activation": self.activation,
            "seed": self.seed,
            "n_params": self.n_params,
        }

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} weights, got {flat.shape}")
        pos = 0
        for p in self.params:
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size
        self.version += 1

    def copy(self) -> "UpdateNetwork":
        d = self.descriptor()
        d.pop("n_params")
        return UpdateNetwork(**d, params=[p.copy() for p in self.params])

    def __call__(self, x):
        return net_forward(self, x)[0]


@dataclass
class ForwardCache:
    net_id: int
    version: int
    x: np.ndarray
    pre: list  # pre-activations of residual blocks
    hs: list  # block inputs, then final hidden


def _act(net, z):
    return np.maximum(z, 0.0) if net.activation == "relu" else z


def net_forward(net: UpdateNetwork, inp):
    """Forward pass on a ``NetInput`` or a raw ``(B, in)`` / ``(in,)`` array.

    Returns ``(delta, cache)``; ``delta`` has the same leading shape as the input.
    """
    x = inp.concat() if isinstance(inp, NetInput) else np.asarray(inp, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"network expects input of width {net.input_dim}, got {x.shape}")
    p = net.params
    h = x @ p[0] + p[1]
    hs, pre = [h], []
    for k in range(net.n_blocks):
        z = h @ p[2 + 2 * k] + p[3 + 2 * k]
        pre.append(z)
        h = h + _act(net, z)
        hs.append(h)
    out = h @ p[-2] + p[-1]
    cache = ForwardCache(id(net), net.version, x, pre, hs)
    return (out[0] if single else out), cache


def net_backward(net: UpdateNetwork, cache: ForwardCache, output_grad):
    """Gradients of ``sum(output * output_grad)``.

    Returns ``(weight_grads, input_grad)``; weight grads follow ``net.params``
    order and are summed over the batch.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise InvalidStateError("forward cache does not belong to the current network weights")
    g = np.asarray(output_grad, dtype=np.float64)
    single = g.ndim == 1
    if single:
        g = g[None]
    if g.shape != (cache.x.shape[0], net.output_dim):
        raise ShapeError(f"output_grad must be {(cache.x.shape[0], net.output_dim)}, got {g.shape}")
    p = net.params
    grads = [None] * len(p)
    grads[-2] = cache.hs[-1].T @ g
    grads[-1] = g.sum(0)
    dh = g @ p[-2].T
    for k in reversed(range(net.n_blocks)):
        dz = dh * (cache.pre[k] > 0) if net.activation == "relu" else dh
        grads[2 + 2 * k] = cache.hs[k].T @ dz
        grads[3 + 2 * k] = dz.sum(0)
        dh = dh + dz @ p[2 + 2 * k].T
    grads[0] = cache.x.T @ dh
    grads[1] = dh.sum(0)
    dx = dh @ p[0].T
    return grads, (dx[0] if single else dx)


def save_checkpoint(net: UpdateNetwork, path, extra=None) -> None:
    """Binary checkpoint: magic, version, JSON descriptor, little-endian f64 weights."""
    desc = net.descriptor()
    if extra:
        desc["extra"] = extra
    blob = json.dumps(desc, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(net.get_flat().astype("<f8").tobytes())


def load_checkpoint(path) -> UpdateNetwork:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a network checkpoint")
    version, n = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    desc = json.loads(data[16:16 + n])
    desc.pop("extra", None)
    n_params = desc.pop("n_params")
    weights = np.frombuffer(data[16 + n:], dtype="<f8")
    if weights.size != n_params:
        raise DataError(f"checkpoint holds {weights.size} weights, descriptor says {n_params}")
    net = UpdateNetwork(**desc)
    net.set_flat(weights)
    net.version = 0
    return net


def checkpoint_info(path) -> dict:
    data = Path(path).read_bytes()
    n = struct.unpack("<II", data[8:16])[1]
    return json.loads(data[16:16 + n])
