"""Training/evaluation recipes shared by the CLI and the acceptance suite.

Trained networks can be cached on disk keyed by a hash of their full
training config, so repeated runs of the same recipe load instead of
retraining.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from .fitter import gd_unroll, grid_search_gd_step, learned_unroll, lift_batch
from .metrics import evaluate
from .trainer import TrainConfig, heldout_batch, new_network, train
from .updatenet import channel_mask, checkpoint_info, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

# Rows of the input-component ablation: (mode, uses target, uses state, uses gradient).
COMPONENT_ROWS = (
    ("target_only", True, False, False),
    ("no_theta", True, False, True),
    ("no_grad", True, True, False),
    ("no_target", False, True, True),
    ("full", True, True, True),
)
UNROLL_SWEEP = (1, 2, 3, 4, 5)


def config_key(config: TrainConfig) -> str:
    blob = json.dumps(dataclasses.asdict(config), sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def trained_network(config: TrainConfig, model, cache_dir=None, dataset=None):
    """Train a fresh network for ``config``, or load it from ``cache_dir``.

    Returns ``(net, train_seconds)``; the training time of a cached network
    is read back from its checkpoint.
    """
    path = None
    if cache_dir is not None and dataset is None:
        path = Path(cache_dir) / f"net_{config_key(config)}.lgdnet"
        if path.exists():
            log.info("loading cached network %s", path.name)
            return load_checkpoint(path), checkpoint_info(path)["extra"]["train_seconds"]
    t0 = time.perf_counter()
    net, _ = train(new_network(config), config, model, dataset=dataset)
    seconds = time.perf_counter() - t0
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        save_checkpoint(net, tmp, extra={"config": dataclasses.asdict(config), "train_seconds": seconds})
        tmp.replace(path)
    return net, seconds


def learned_errors(net, model, batch, n_iters, mode="full"):
    """Per-iteration states, losses and the final per-frame PA-MPJPE."""
    states, losses, _ = learned_unroll(net, model, batch.points, batch.visible, n_iters, mask=channel_mask(mode))
    report = evaluate(model, np.swapaxes(states, 0, 1), batch.params)
    return states, losses, report


def lifting_error(liftnet, model, batch):
    return evaluate(model, lift_batch(liftnet, batch.points, batch.visible), batch.params)


def gd_baseline(model, val_batch, test_batch, n_iters=4):
    """Grid-search the step size on ``val_batch``; report on ``test_batch``."""
    lam, scores = grid_search_gd_step(model, val_batch.points, val_batch.visible, val_batch.params, n_iters)
    states = gd_unroll(model, test_batch.points, test_batch.visible, lam, n_iters)[0]
    return lam, scores, evaluate(model, states[-1], test_batch.params)


def component_ablation(base: TrainConfig, model, heldout, cache_dir=None):
    """Train one network per input-channel subset; rows ``(mode, PA-MPJPE)``."""
    rows = []
    for mode, *_ in COMPONENT_ROWS:
        cfg = dataclasses.replace(base, ablation=mode)
        net, _ = trained_network(cfg, model, cache_dir)
        rows.append((mode, learned_errors(net, model, heldout, cfg.unroll, mode)[2].mean_pa_mpjpe))
    return rows


def iteration_ablation(base: TrainConfig, model, heldout, unrolls=UNROLL_SWEEP, cache_dir=None):
    """Train one network per unroll length, evaluated at that length."""
    rows = []
    for n in unrolls:
        cfg = dataclasses.replace(base, unroll=n)
        net, _ = trained_network(cfg, model, cache_dir)
        rows.append((n, learned_errors(net, model, heldout, n, cfg.ablation)[2].mean_pa_mpjpe))
    return rows


def lifting_config(base: TrainConfig) -> TrainConfig:
    """Direct lifting: target channel only, a single update."""
    return dataclasses.replace(base, ablation="target_only", unroll=1)


def default_heldout(model, config: TrainConfig, size=1000, seed=None):
    return heldout_batch(model, config, size, seed=seed)
