"""Inference-time fitters: learned updates, plain gradient descent, one-shot lifting."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .diffcore import PARAM_DIM, Keypoints2D, ModelParams, loss_and_grad_batch
from .errors import DegenerateTargetError, DivergenceError
from .kinematics import SkeletonModel
from .updatenet import UpdateNetwork, build_input_batch, channel_mask, net_forward

MIN_VISIBLE = 6
GD_STEP_GRID = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0, 3.0)


@dataclass
class FitTrace:
    """States ``Θ_0 .. Θ_n`` with the loss, step norm and time of each."""

    states: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    wall_us: list = field(default_factory=list)

    @property
    def iterations_run(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> ModelParams:
        return ModelParams(self.states[-1])

    def record(self, state, loss, step_norm, t_us):
        self.states.append(np.array(state))
        self.losses.append(float(loss))
        self.step_norms.append(float(step_norm))
        self.wall_us.append(float(t_us))

    def write_csv(self, path, frame=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "iteration", "reproj_loss", "step_norm", "wall_us"]
                       + [f"p{i}" for i in range(PARAM_DIM)])
            for n, (st, loss, dn, us) in enumerate(zip(self.states, self.losses, self.step_norms, self.wall_us)):
                w.writerow([frame, n, repr(loss), repr(dn), repr(us)] + [repr(float(v)) for v in st])


def check_fittable(target: Keypoints2D):
    if target.n_visible < MIN_VISIBLE:
        raise DegenerateTargetError(
            f"only {target.n_visible} visible joints; at least {MIN_VISIBLE} are needed"
        )


def _run(target, model, n_iters, update):
    """Shared single-target loop; ``update(theta, grad) -> delta``."""
    check_fittable(target)
    pts, vis = target.points[None], target.visibility[None].astype(np.float64)
    theta = np.zeros((1, PARAM_DIM))
    trace = FitTrace()
    t0 = time.perf_counter()
    loss, grad = loss_and_grad_batch(model, theta, pts, vis)
    trace.record(theta[0], loss[0], 0.0, 0.0)
    for n in range(n_iters):
        delta = update(theta, grad, pts, vis)
        theta = theta + delta
        if not np.all(np.isfinite(theta)):
            raise DivergenceError("fit produced a non-finite state", step=n + 1, payload=trace)
        loss, grad = loss_and_grad_batch(model, theta, pts, vis)
        trace.record(theta[0], loss[0], np.linalg.norm(delta), 1e6 * (time.perf_counter() - t0))
        if not np.isfinite(loss[0]):
            raise DivergenceError("fit loss is not finite", step=n + 1, payload=trace)
    return trace


def fit_learned(net: UpdateNetwork, target: Keypoints2D, model: SkeletonModel, n_iters=4, mode="full"):
    """``Θ_{n+1} = Θ_n + net(dL/dΘ_n, Θ_n, x)`` from ``Θ_0 = 0``.

    ``n_iters`` may exceed the number of iterations the network was trained
    with; nothing stops early.
    """
    mask = None if mode == "full" else channel_mask(mode)

    def update(theta, grad, pts, vis):
        x = build_input_batch(grad, theta, pts, vis)
        return net_forward(net, x if mask is None else x * mask)[0]

    return _run(target, model, n_iters, update)


def fit_vanilla_gd(target: Keypoints2D, model: SkeletonModel, step_size, n_iters=4, free=None):
    """``Θ_{n+1} = Θ_n - λ dL/dΘ_n`` from ``Θ_0 = 0`` without any prior term.

    ``free`` optionally restricts the update to a boolean subset of the
    parameter vector.
    """
    if step_size < 0:
        raise ValueError("step size must be non-negative")
    free = np.ones(PARAM_DIM) if free is None else np.asarray(free, dtype=np.float64)

    def update(theta, grad, pts, vis):
        return -step_size * grad * free

    return _run(target, model, n_iters, update)


def fit_direct_lifting(liftnet: UpdateNetwork, target: Keypoints2D) -> ModelParams:
    """Single regression from the 2D target; gradient and state channels are zero."""
    check_fittable(target)
    x = build_input_batch(np.zeros((1, PARAM_DIM)), np.zeros((1, PARAM_DIM)),
                          target.points[None], target.visibility[None])
    return ModelParams(net_forward(liftnet, x * channel_mask("target_only"))[0][0])


def learned_unroll(net, model, points, visible, n_iters, mask=None, keep_caches=False):
    """Batched learned fit of ``(B, J, 2)`` targets.

    Returns ``(states (n_iters + 1, B, P), losses (n_iters + 1, B), caches)``.
    """
    B = len(points)
    theta = np.zeros((B, PARAM_DIM))
    states, losses, caches = [theta], [], []
    for n in range(n_iters):
        loss, grad = loss_and_grad_batch(model, theta, points, visible)
        x = build_input_batch(grad, theta, points, visible)
        if mask is not None:
            x = x * mask
        delta, cache = net_forward(net, x)
        theta = theta + delta
        if not np.all(np.isfinite(theta)):
            raise DivergenceError("non-finite optimizer state", step=n + 1)
        states.append(theta)
        losses.append(loss)
        if keep_caches:
            caches.append(cache)
    losses.append(loss_and_grad_batch(model, theta, points, visible, with_grad=False)[0])
    return np.stack(states), np.stack(losses), caches


def gd_unroll(model, points, visible, step_size, n_iters):
    """Batched vanilla gradient descent; rows that blow up keep NaN states."""
    B = len(points)
    theta = np.zeros((B, PARAM_DIM))
    states, losses = [theta], []
    alive = np.ones(B, dtype=bool)
    for _ in range(n_iters):
        loss = np.full(B, np.nan)
        grad = np.zeros((B, PARAM_DIM))
        if alive.any():
            loss[alive], grad[alive] = loss_and_grad_batch(model, theta[alive], points[alive], visible[alive])
        theta = theta - step_size * grad
        theta[~alive] = np.nan
        alive &= np.all(np.isfinite(theta), axis=1) & (np.abs(theta).max(1) < 1e6)
        states.append(theta)
        losses.append(loss)
    final = np.full(B, np.nan)
    if alive.any():
        final[alive] = loss_and_grad_batch(model, theta[alive], points[alive], visible[alive], with_grad=False)[0]
    losses.append(final)
    return np.stack(states), np.stack(losses)


def lift_batch(liftnet, points, visible):
    B = len(points)
    x = build_input_batch(np.zeros((B, PARAM_DIM)), np.zeros((B, PARAM_DIM)), points, visible)
    return net_forward(liftnet, x * channel_mask("target_only"))[0]


def grid_search_gd_step(model, points, visible, gt_params, n_iters=4, grid=GD_STEP_GRID):
    """Pick the gradient-descent step size with the lowest mean reconstruction error.

    Returns ``(best_step, {step: mean PA-MPJPE})``; diverging steps score inf.
    """
    from .metrics import evaluate

    scores = {}
    for lam in grid:
        states = gd_unroll(model, points, visible, lam, n_iters)[0]
        final = states[-1]
        if not np.all(np.isfinite(final)):
            scores[lam] = float("inf")
            continue
        scores[lam] = evaluate(model, final, gt_params).mean_pa_mpjpe
    best = min(scores, key=scores.get)
    return best, scores
