"""End-to-end acceptance checks.

Trained networks are cached under ``.acceptance_cache`` (override with
``LGDFIT_CACHE``); a cold run trains every variant at full budget and takes
well over an hour on one core.  Each criterion prints one PASS/FAIL line,
repeated in the terminal summary.
"""

import dataclasses
import os
import time
from pathlib import Path

import numpy as np
import pytest

from lgdfit import experiments
from lgdfit.cli import main
from lgdfit.fitter import fit_learned, learned_unroll
from lgdfit.kinematics import fk_batch, rodrigues
from lgdfit.metrics import evaluate, pa_mpjpe, procrustes_align
from lgdfit.trainer import Batch, TrainConfig, heldout_batch, render_targets, sample_batch
from lgdfit.updatenet import channel_mask

from conftest import record_criterion

CACHE = Path(os.environ.get("LGDFIT_CACHE", Path(__file__).resolve().parents[1] / ".acceptance_cache"))
HELDOUT = 1000
BASE = TrainConfig()

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def heldout(skeleton):
    return heldout_batch(skeleton, BASE, HELDOUT)


@pytest.fixture(scope="module")
def nets(skeleton):
    cache = {}

    def get(**changes):
        cfg = dataclasses.replace(BASE, **changes)
        key = experiments.config_key(cfg)
        if key not in cache:
            cache[key] = experiments.trained_network(cfg, skeleton, CACHE)
        return cache[key]

    return get


def learned_pa(net, skeleton, batch, n_iters, mode="full"):
    return experiments.learned_errors(net, skeleton, batch, n_iters, mode)[2].mean_pa_mpjpe


def test_1_gradient_correctness(capsys):
    t0 = time.perf_counter()
    code = main(["gradcheck", "--count", "100", "--seed", "0", "--tol", "1e-4"])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out.strip()
    with capsys.disabled():
        ok = record_criterion("1 gradient correctness", code == 0 and elapsed < 10,
                              f"{out.split(' time=')[0]}, {elapsed:.2f}s (limit 10s)")
    assert ok


def test_2_training_efficacy(skeleton, nets, heldout):
    net, seconds = nets()
    states, losses, report = experiments.learned_errors(net, skeleton, heldout, 4)
    baseline = evaluate(skeleton, np.zeros_like(heldout.params), heldout.params).mean_pa_mpjpe
    ratio = report.mean_pa_mpjpe / baseline
    improved = float(np.mean(losses[4] < losses[0]))
    ok = ratio < 0.3 and improved >= 0.9 and seconds < 1800
    record_criterion("2 training efficacy", ok,
                     f"PA-MPJPE Θ_4 {report.mean_pa_mpjpe:.2f} vs Θ_0 {baseline:.2f} (ratio {ratio:.3f}, need < 0.3); "
                     f"loss_4 < loss_0 on {100 * improved:.1f}% (need >= 90%); "
                     f"training {seconds / 60:.1f} min (limit 30)")
    assert ok


def test_2b_extrapolation(skeleton, nets, heldout):
    net, _ = nets()
    _, losses, _ = experiments.learned_errors(net, skeleton, heldout, 8)
    m4, m8 = np.median(losses[4]), np.median(losses[8])
    ok = m8 <= 1.1 * m4
    record_criterion("2b extrapolation to 8 iterations", ok,
                     f"median reprojection loss iter 4 {m4:.5f}, iter 8 {m8:.5f} (limit +10%)")
    assert ok


def test_3_iteration_ablation(skeleton, nets, heldout):
    err = {n: learned_pa(nets(unroll=n)[0], skeleton, heldout, n) for n in (1, 4, 5)}
    gap = (err[4] - err[5]) / err[4]
    ok = err[4] <= err[1] and abs(gap) <= 0.05
    record_criterion("3 iteration ablation", ok,
                     f"N=1 {err[1]:.2f}, N=4 {err[4]:.2f}, N=5 {err[5]:.2f}; "
                     f"N=4 <= N=1 {err[4] <= err[1]}, N4-N5 gap {100 * gap:+.1f}% (within 5%)")
    assert ok


def test_4_component_ablation(skeleton, nets, heldout):
    err = {mode: learned_pa(nets(ablation=mode)[0], skeleton, heldout, 4, mode)
           for mode, *_ in experiments.COMPONENT_ROWS}
    worst = max(err.values())
    ok = all(err["full"] <= v for v in err.values()) and err["target_only"] >= 0.98 * worst
    table = ", ".join(f"{k} {v:.2f}" for k, v in err.items())
    record_criterion("4 component ablation", ok, f"{table}; full is best and target_only within 2% of worst")
    assert ok


def test_5_baselines(skeleton, nets, heldout):
    learned = learned_pa(nets()[0], skeleton, heldout, 4)
    val = sample_batch(skeleton, BASE.sampler(), BASE, BASE.seed + 1, 2**31 - 2, HELDOUT)
    lam, _, gd_report = experiments.gd_baseline(skeleton, val, heldout, 4)
    lift_cfg = experiments.lifting_config(BASE)
    liftnet, _ = nets(ablation=lift_cfg.ablation, unroll=lift_cfg.unroll)
    lift = experiments.lifting_error(liftnet, skeleton, heldout).mean_pa_mpjpe
    gain_gd = 1 - learned / gd_report.mean_pa_mpjpe
    gain_lift = 1 - learned / lift
    ok = gain_gd >= 0.25 and gain_lift >= 0.10
    record_criterion("5 baseline superiority", ok,
                     f"learned {learned:.2f}, GD (step {lam}) {gd_report.mean_pa_mpjpe:.2f} -> {100 * gain_gd:.1f}% "
                     f"better (need 25%), lifting {lift:.2f} -> {100 * gain_lift:.1f}% better (need 10%)")
    assert ok


def test_6_speed(skeleton, nets, heldout):
    net, _ = nets()
    targets = heldout.targets()
    fit_learned(net, targets[0], skeleton, 4)
    t0 = time.perf_counter()
    for target in targets:
        fit_learned(net, target, skeleton, 4)
    per_fit = 1e3 * (time.perf_counter() - t0) / len(targets)
    ok = per_fit < 10
    record_criterion("6 speed", ok, f"{per_fit:.2f} ms per 4-iteration fit over {len(targets)} fits, "
                     f"{net.n_params} parameters (limit 10 ms)")
    assert ok


def test_7_metric_sanity(skeleton, nets, heldout):
    rng = np.random.default_rng(7)
    worst_inv = worst_res = 0.0
    for _ in range(200):
        A, B = rng.normal(size=(2, 24, 3))
        s = rng.uniform(0.1, 10)
        moved = s * A @ rodrigues(rng.normal(size=3)).T + rng.normal(size=3)
        worst_inv = max(worst_inv, abs(pa_mpjpe(moved, B) - pa_mpjpe(A, B)))
        C = s * B @ rodrigues(rng.normal(size=3)).T + rng.normal(size=3)
        worst_res = max(worst_res, np.abs(procrustes_align(C, B)[3] - B).max())
    net, _ = nets()
    report = experiments.learned_errors(net, skeleton, heldout, 4)[2]
    excess = report.pa_mpjpe - report.mpjpe
    pa_ok = bool(np.all(excess <= 1e-9))
    theta = rng.normal(scale=1.0, size=(1000, 23, 3))
    beta = rng.uniform(-3, 3, size=(1000, 10))
    X = fk_batch(skeleton, theta, beta)
    idx = np.arange(1, skeleton.joint_count)
    got = np.linalg.norm(X[:, idx] - X[:, np.array(skeleton.parents)[idx]], axis=-1)
    want = np.stack([skeleton.bone_lengths(b) for b in beta])
    bone_err = np.abs(got - want).max() / want.max()
    ok = worst_inv < 1e-9 and worst_res < 1e-9 and pa_ok and bone_err < 1e-9
    record_criterion("7 metric sanity", ok,
                     f"similarity invariance {worst_inv:.1e}, exact-similarity residual {worst_res:.1e}, "
                     f"PA <= MPJPE on {int(np.sum(excess <= 1e-9))} of {len(excess)} frames (worst excess {excess.max():.2f}), "
                     f"bone length error {bone_err:.1e}")
    assert ok


def test_8_dropout_robustness(skeleton, nets, heldout):
    net, _ = nets()
    rng = np.random.default_rng(8)
    full_vis = np.ones_like(heldout.visible)
    hidden_vis = full_vis.copy()
    for row in hidden_vis:
        row[rng.choice(skeleton.joint_count, 4, replace=False)] = 0
    scores = {}
    for name, vis in (("all visible", full_vis), ("4 hidden", hidden_vis)):
        batch = Batch(heldout.params, render_targets(skeleton, heldout.params, vis), vis)
        states = learned_unroll(net, skeleton, batch.points, batch.visible, 4, mask=channel_mask("full"))[0]
        scores[name] = evaluate(skeleton, states[-1], batch.params).mean_pa_mpjpe
    degradation = scores["4 hidden"] / scores["all visible"] - 1
    ok = degradation < 0.5
    record_criterion("8 dropout robustness", ok,
                     f"all visible {scores['all visible']:.2f}, 4 hidden {scores['4 hidden']:.2f} "
                     f"-> {100 * degradation:+.1f}% (limit +50%)")
    assert ok
