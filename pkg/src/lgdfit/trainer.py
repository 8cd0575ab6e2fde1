"""Training the update network by unrolling the learned optimizer.

Each step samples poses, shapes and cameras, renders 2D targets with joint
dropout, runs ``unroll`` learned updates from the all-zero state and
backpropagates the summed L1 parameter error of every post-update state.
The loss gradient fed to the network is treated as a constant.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import project_batch
from .diffcore import PARAM_DIM, Keypoints2D, ModelParams, split_params
from .errors import ConfigError, DivergenceError
from .fitter import MIN_VISIBLE, learned_unroll
from .kinematics import JOINT_NAMES, NUM_BETAS, NUM_JOINTS, SkeletonModel, fk_batch
from .updatenet import (
    ABLATION_MODES,
    UpdateNetwork,
    channel_mask,
    net_backward,
    save_checkpoint,
)

log = logging.getLogger(__name__)

_SPINE = {"spine1", "spine2", "spine3", "neck", "head"}
_EXTREMITIES = {"l_ankle", "r_ankle", "l_foot", "r_foot", "l_wrist", "r_wrist", "l_hand", "r_hand"}


def default_pose_std():
    """Per articulated joint axis-angle std: spine 0.15, extremities 0.8, limbs 0.5 rad."""
    stds = []
    for name in JOINT_NAMES[1:]:
        if name in _SPINE:
            stds.append(0.15)
        elif name in _EXTREMITIES:
            stds.append(0.8)
        else:
            stds.append(0.5)
    return tuple(stds)


@dataclass
class PoseSampler:
    """Truncated-Gaussian poses and shapes, or draws from a pose dataset.

    If ``dataset`` (an ``(n, 79)`` array of ``[theta, beta]`` rows) is set,
    poses are drawn uniformly from it instead.
    """

    pose_std: tuple = field(default_factory=default_pose_std)
    beta_std: float = 1.0
    beta_bound: float = 3.0
    theta_bound: float = np.pi
    dataset: np.ndarray | None = None

    def sample(self, rng, n=None):
        """One ``(theta (23, 3), beta (10,))`` pair, or ``n`` stacked pairs."""
        size = 1 if n is None else n
        if self.dataset is not None:
            rows = self.dataset[rng.integers(0, len(self.dataset), size)]
            theta = rows[:, :3 * (NUM_JOINTS - 1)].reshape(size, -1, 3)
            beta = rows[:, 3 * (NUM_JOINTS - 1):]
        else:
            std = np.asarray(self.pose_std, dtype=np.float64)[None, :, None]
            theta = _truncated_normal(rng, (size, len(self.pose_std), 3), std, self.theta_bound)
            beta = _truncated_normal(rng, (size, NUM_BETAS), self.beta_std, self.beta_bound)
        if n is None:
            return theta[0], beta[0]
        return theta, beta


def _truncated_normal(rng, shape, std, bound):
    x = rng.standard_normal(shape) * std
    bad = np.abs(x) > bound
    while bad.any():
        x = np.where(bad, rng.standard_normal(shape) * std, x)
        bad = np.abs(x) > bound
    return x


@dataclass
class TrainConfig:
    unroll: int = 4
    batch_size: int = 64
    steps: int = 20000
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout_prob: float = 0.1
    scale_range: tuple = (0.5, 1.5)
    trans_range: tuple = (-0.5, 0.5)
    max_rotation_deg: float = 60.0
    pose_std: tuple = field(default_factory=default_pose_std)
    beta_std: float = 1.0
    ablation: str = "full"
    hidden: int = 256
    n_blocks: int = 2
    seed: int = 0
    eval_every: int = 1000
    heldout_size: int = 200
    checkpoint_every: int = 0

    def __post_init__(self):
        self.scale_range = tuple(self.scale_range)
        self.trans_range = tuple(self.trans_range)
        self.pose_std = tuple(self.pose_std)
        self.validate()

    def validate(self):
        if self.unroll < 1:
            raise ConfigError("unroll must be >= 1")
        if not 0 <= self.dropout_prob < 1:
            raise ConfigError("dropout_prob must lie in [0, 1)")
        if self.scale_range[0] <= 0 or self.scale_range[1] < self.scale_range[0]:
            raise ConfigError("scale_range must be positive and ordered")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")
        if self.ablation not in ABLATION_MODES:
            raise ConfigError(f"ablation must be one of {ABLATION_MODES}")
        if len(self.pose_std) != NUM_JOINTS - 1:
            raise ConfigError(f"pose_std needs {NUM_JOINTS - 1} entries")

    def sampler(self, dataset=None) -> PoseSampler:
        return PoseSampler(pose_std=self.pose_std, beta_std=self.beta_std, dataset=dataset)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


def sample_rotation(rng, max_angle, n=None):
    """Axis-angle rotations drawn uniformly (Haar) among those within ``max_angle``.

    The axis is isotropic; the angle has density proportional to
    ``1 - cos(angle)`` on ``[0, max_angle]``, sampled by rejection.
    """
    size = 1 if n is None else n
    axis = rng.standard_normal((size, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    angle = np.empty(size)
    todo = np.arange(size)
    peak = 1 - np.cos(max_angle)
    while len(todo):
        prop = rng.uniform(0, max_angle, len(todo))
        ok = rng.random(len(todo)) * peak <= 1 - np.cos(prop)
        angle[todo[ok]] = prop[ok]
        todo = todo[~ok]
    rot = axis * angle[:, None]
    return rot[0] if n is None else rot


def sample_camera(rng, config: TrainConfig, n=None):
    rot = sample_rotation(rng, np.deg2rad(config.max_rotation_deg), n)
    trans = rng.uniform(*config.trans_range, size=2 if n is None else (n, 2))
    scale = rng.uniform(*config.scale_range, size=n)
    return rot, trans, scale


def sample_visibility(rng, p, n_joints=NUM_JOINTS, min_visible=MIN_VISIBLE, n=None):
    """Independent per-joint dropout, rows redrawn until ``min_visible`` joints remain."""
    size = 1 if n is None else n
    vis = rng.random((size, n_joints)) >= p
    bad = np.flatnonzero(vis.sum(1) < min_visible)
    while len(bad):
        vis[bad] = rng.random((len(bad), n_joints)) >= p
        bad = bad[vis[bad].sum(1) < min_visible]
    return vis[0] if n is None else vis


def _draw(sampler, config, rng, n=None):
    theta, beta = sampler.sample(rng, n)
    rot, trans, scale = sample_camera(rng, config, n)
    vis = sample_visibility(rng, config.dropout_prob, n=n)
    if n is None:
        return np.concatenate([theta.ravel(), beta, rot, trans, [scale]]), vis
    return np.concatenate([theta.reshape(n, -1), beta, rot, trans, scale[:, None]], 1), vis


def render_targets(model: SkeletonModel, params, visible):
    """Project ground-truth parameters and zero the hidden joints."""
    theta, beta, rot, trans, scale = split_params(params, model)
    X = fk_batch(model, theta, beta)
    pts = project_batch(X, rot, trans, scale)
    return pts * visible[..., None]


def sample_instance(sampler: PoseSampler, config: TrainConfig, rng, model: SkeletonModel):
    """One ground-truth parameter set and its 2D target with dropout."""
    vec, vis = _draw(sampler, config, rng)
    pts = render_targets(model, vec[None], vis[None].astype(float))[0]
    return ModelParams(vec), Keypoints2D(pts, vis)


@dataclass
class Batch:
    params: np.ndarray  # (B, P) ground truth
    points: np.ndarray  # (B, J, 2)
    visible: np.ndarray  # (B, J) float 0/1

    def __len__(self):
        return len(self.params)

    def targets(self):
        return [Keypoints2D(p, v > 0) for p, v in zip(self.points, self.visible)]


def sample_batch(model, sampler, config, seed, step, size=None):
    """Batch for ``step``, drawn from a generator seeded with ``(seed, step)``."""
    size = config.batch_size if size is None else size
    rng = np.random.default_rng((seed, step))
    params, vis = _draw(sampler, config, rng, size)
    visible = vis.astype(np.float64)
    return Batch(params, render_targets(model, params, visible), visible)


HELDOUT_STREAM = 2**31 - 1


def heldout_batch(model, config, size, seed=None, dataset=None):
    """Deterministic evaluation set drawn from a stream training never uses."""
    seed = config.seed if seed is None else seed
    return sample_batch(model, config.sampler(dataset), config, seed, HELDOUT_STREAM, size)


def unrolled_loss_and_grads(net, model, batch: Batch, config: TrainConfig):
    """Mean over the batch of ``sum_{n=1..N} |Θ_n - Θ_gt|_1`` and its weight gradients."""
    mask = channel_mask(config.ablation)
    N = config.unroll
    B = len(batch)
    states, _, caches = learned_unroll(net, model, batch.points, batch.visible, N, mask=mask, keep_caches=True)
    diffs = states[1:] - batch.params[None]
    loss = float(np.abs(diffs).sum() / B)
    if not np.isfinite(loss):
        raise DivergenceError("non-finite training loss")
    state_mask = mask[PARAM_DIM:2 * PARAM_DIM]
    grads = [np.zeros_like(p) for p in net.params]
    d_state = np.zeros((B, PARAM_DIM))
    for n in reversed(range(N)):
        d_state = d_state + np.sign(diffs[n]) / B
        w_grads, d_in = net_backward(net, caches[n], d_state)
        for acc, g in zip(grads, w_grads):
            acc += g
        d_state = d_state + d_in[:, PARAM_DIM:2 * PARAM_DIM] * state_mask
    return loss, grads


class Adam:
    def __init__(self, shapes, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def new_network(config: TrainConfig) -> UpdateNetwork:
    return UpdateNetwork(hidden=config.hidden, n_blocks=config.n_blocks, seed=config.seed)


def heldout_pa_mpjpe(net, model, batch, config, n_iters=None):
    from .metrics import evaluate

    states = learned_unroll(net, model, batch.points, batch.visible, n_iters or config.unroll,
                            mask=channel_mask(config.ablation))[0]
    return evaluate(model, states[-1], batch.params).mean_pa_mpjpe


def train(net: UpdateNetwork, config: TrainConfig, model: SkeletonModel, *, dataset=None,
          checkpoint_dir=None, heldout=None, start_step=0, callback=None):
    """Adam on the unrolled loss for ``config.steps`` steps.

    Returns ``(net, log)`` where ``log`` rows hold step, train_loss,
    heldout_pa_mpjpe (NaN between evaluations) and wall_ms.  On a non-finite
    loss the weights are rolled back to the last good step and a
    :class:`DivergenceError` carrying them is raised.
    """
    sampler = config.sampler(dataset)
    opt = Adam([p.shape for p in net.params], config.learning_rate,
               config.adam_beta1, config.adam_beta2, config.adam_eps)
    if heldout is None and config.eval_every and config.steps:
        heldout = heldout_batch(model, config, config.heldout_size, dataset=dataset)
    rows = []
    last_good = [p.copy() for p in net.params]
    t0 = time.perf_counter()
    for step in range(start_step, start_step + config.steps):
        batch = sample_batch(model, sampler, config, config.seed, step)
        try:
            loss, grads = unrolled_loss_and_grads(net, model, batch, config)
        except (DivergenceError, FloatingPointError) as exc:
            for p, good in zip(net.params, last_good):
                p[...] = good
            net.version += 1
            raise DivergenceError("training diverged", step=step, payload=net) from exc
        for p, good in zip(net.params, last_good):
            good[...] = p
        opt.step(net.params, grads)
        net.version += 1
        done = step + 1 - start_step
        pa = float("nan")
        if heldout is not None and config.eval_every and (done % config.eval_every == 0 or done == config.steps):
            pa = heldout_pa_mpjpe(net, model, heldout, config)
            log.info("step %d loss %.4f heldout PA-MPJPE %.2f", step + 1, loss, pa)
        rows.append({"step": step + 1, "train_loss": loss, "heldout_pa_mpjpe": pa,
                     "wall_ms": 1e3 * (time.perf_counter() - t0)})
        if checkpoint_dir is not None and config.checkpoint_every and done % config.checkpoint_every == 0:
            save_checkpoint(net, Path(checkpoint_dir) / f"step_{step + 1:07d}.lgdnet",
                            extra={"step": step + 1, "seed": config.seed})
        if callback is not None:
            callback(step + 1, loss)
    return net, rows
