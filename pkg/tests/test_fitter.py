import numpy as np
import pytest

from lgdfit.diffcore import TRANS, Keypoints2D, ModelParams, reproj_loss
from lgdfit.errors import DegenerateTargetError
from lgdfit.fitter import (
    fit_direct_lifting,
    fit_learned,
    fit_vanilla_gd,
    gd_unroll,
    grid_search_gd_step,
    learned_unroll,
)
from lgdfit.trainer import TrainConfig, sample_batch, sample_instance
from lgdfit.updatenet import UpdateNetwork


@pytest.fixture
def instance(skeleton):
    cfg = TrainConfig()
    return sample_instance(cfg.sampler(), cfg, np.random.default_rng(0), skeleton)


def randomized(net, seed, scale=0.02):
    net.set_flat(np.random.default_rng(seed).normal(scale=scale, size=net.n_params))
    return net


def test_untrained_net_stays_at_zero(skeleton, instance):
    _, target = instance
    trace = fit_learned(UpdateNetwork(seed=0), target, skeleton, n_iters=4)
    assert trace.iterations_run == 4
    assert all(np.all(s == 0) for s in trace.states)
    assert len(set(trace.losses)) == 1
    assert trace.losses[0] == pytest.approx(reproj_loss(ModelParams.zeros(), target, skeleton))


def test_zero_iterations(skeleton, instance):
    trace = fit_learned(UpdateNetwork(), instance[1], skeleton, n_iters=0)
    assert trace.iterations_run == 0 and np.all(trace.final.vector == 0)


def test_gd_zero_step_stays_put(skeleton, instance):
    trace = fit_vanilla_gd(instance[1], skeleton, 0.0, n_iters=3)
    assert all(np.all(s == 0) for s in trace.states)


def test_gd_at_target_does_not_move(skeleton):
    target = Keypoints2D.all_visible(np.zeros((24, 2)))
    # all-zero state projects every joint to the origin: zero loss, zero gradient
    trace = fit_vanilla_gd(target, skeleton, 0.5, n_iters=5)
    assert trace.losses[-1] == 0 and np.all(trace.final.vector == 0)


def test_translation_only_gd_reaches_least_squares(skeleton, rng):
    pts = rng.normal(size=(24, 2))
    vis = rng.random(24) > 0.3
    free = np.zeros(85)
    free[TRANS] = 1
    trace = fit_vanilla_gd(Keypoints2D(pts, vis), skeleton, 0.5, n_iters=40, free=free)
    np.testing.assert_allclose(trace.final.translation, pts[vis].mean(0), atol=1e-10)
    losses = np.array(trace.losses)
    assert np.all(np.diff(losses) <= 1e-15)


def test_learned_fit_is_deterministic(skeleton, instance):
    net = randomized(UpdateNetwork(seed=1), 1)
    a = fit_learned(net, instance[1], skeleton, n_iters=6)
    b = fit_learned(net, instance[1], skeleton, n_iters=6)
    assert np.array(a.states).tobytes() == np.array(b.states).tobytes()
    assert a.losses == b.losses


def test_single_fit_matches_batched_unroll(skeleton):
    cfg = TrainConfig(batch_size=5)
    batch = sample_batch(skeleton, cfg.sampler(), cfg, 0, 0)
    net = randomized(UpdateNetwork(seed=2), 2)
    states, losses, _ = learned_unroll(net, skeleton, batch.points, batch.visible, 3)
    for i, target in enumerate(batch.targets()):
        trace = fit_learned(net, target, skeleton, n_iters=3)
        np.testing.assert_allclose(np.array(trace.states), states[:, i], atol=1e-12)
        np.testing.assert_allclose(trace.losses, losses[:, i], rtol=1e-12)


def test_trace_loss_matches_reprojection(skeleton, instance):
    net = randomized(UpdateNetwork(seed=3), 3)
    trace = fit_learned(net, instance[1], skeleton, n_iters=4)
    assert trace.losses[-1] == pytest.approx(reproj_loss(trace.final, instance[1], skeleton), rel=1e-12)


def test_fresh_lifting_net_returns_zero(instance):
    assert np.all(fit_direct_lifting(UpdateNetwork(), instance[1]).vector == 0)


def test_too_few_visible_joints(skeleton, rng):
    vis = np.zeros(24, dtype=bool)
    vis[:3] = True
    target = Keypoints2D(rng.normal(size=(24, 2)), vis)
    with pytest.raises(DegenerateTargetError):
        fit_learned(UpdateNetwork(), target, skeleton)
    with pytest.raises(DegenerateTargetError):
        fit_vanilla_gd(target, skeleton, 0.1)
    with pytest.raises(DegenerateTargetError):
        fit_direct_lifting(UpdateNetwork(), target)


def test_gd_batch_matches_single(skeleton):
    cfg = TrainConfig(batch_size=3)
    batch = sample_batch(skeleton, cfg.sampler(), cfg, 1, 0)
    states, _ = gd_unroll(skeleton, batch.points, batch.visible, 0.1, 4)
    for i, target in enumerate(batch.targets()):
        np.testing.assert_allclose(fit_vanilla_gd(target, skeleton, 0.1, 4).final.vector, states[-1, i], atol=1e-12)


def test_grid_search_flags_divergent_steps(skeleton):
    cfg = TrainConfig(batch_size=20)
    batch = sample_batch(skeleton, cfg.sampler(), cfg, 1, 0)
    best, scores = grid_search_gd_step(skeleton, batch.points, batch.visible, batch.params, 4,
                                       grid=(0.01, 0.1, 1e6))
    assert scores[1e6] == float("inf")
    assert best in (0.01, 0.1) and scores[best] == min(scores.values())
