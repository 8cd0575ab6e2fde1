import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgdfit.errors import DegenerateAlignmentError, InvalidInputError
from lgdfit.kinematics import rodrigues
from lgdfit.metrics import evaluate, joints_from_params, mpjpe, pa_mpjpe, procrustes_align

from conftest import random_params


def horn_rotation(A, B):
    """Rotation aligning centered A onto centered B from the quaternion eigenproblem."""
    a = A - A.mean(0)
    b = B - B.mean(0)
    M = a.T @ b
    Sxx, Sxy, Sxz = M[0]
    Syx, Syy, Syz = M[1]
    Szx, Szy, Szz = M[2]
    N = np.array([
        [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
        [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
        [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
        [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
    ])
    w, v = np.linalg.eigh(N)
    q0, qx, qy, qz = v[:, -1]
    return np.array([
        [q0**2 + qx**2 - qy**2 - qz**2, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
        [2 * (qy * qx + q0 * qz), q0**2 - qx**2 + qy**2 - qz**2, 2 * (qy * qz - q0 * qx)],
        [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0**2 - qx**2 - qy**2 + qz**2],
    ])


def test_identical_sets_align_trivially(rng):
    A = rng.normal(size=(24, 3))
    s, R, t, aligned = procrustes_align(A, A)
    assert s == pytest.approx(1.0)
    np.testing.assert_allclose(R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(t, 0, atol=1e-12)
    assert pa_mpjpe(A, A) < 1e-12


def test_recovers_exact_similarity(rng):
    A = rng.normal(size=(24, 3))
    R = rodrigues(np.array([0.3, -1.1, 0.7]))
    B = 2.5 * A @ R.T + np.array([1.0, -2.0, 0.5])
    s, R_est, t, aligned = procrustes_align(A, B)
    assert s == pytest.approx(2.5, rel=1e-12)
    np.testing.assert_allclose(R_est, R, atol=1e-12)
    np.testing.assert_allclose(t, [1.0, -2.0, 0.5], atol=1e-12)
    assert pa_mpjpe(A, B) < 1e-9


def test_reflection_is_not_used(rng):
    A = rng.normal(size=(24, 3))
    B = A * np.array([1.0, 1.0, -1.0])
    R = procrustes_align(A, B)[1]
    assert np.linalg.det(R) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(10))
def test_rotation_matches_quaternion_oracle(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(24, 3))
    B = A @ rodrigues(rng.normal(size=3)).T + 0.1 * rng.normal(size=(24, 3))
    np.testing.assert_allclose(procrustes_align(A, B)[1], horn_rotation(A, B), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), s=st.floats(0.1, 10), w=st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_reconstruction_error_invariant_to_similarity_of_prediction(seed, s, w):
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(24, 3))
    gt = rng.normal(size=(24, 3))
    moved = s * pred @ rodrigues(np.array(w)).T + rng.normal(size=3)
    assert abs(pa_mpjpe(moved, gt) - pa_mpjpe(pred, gt)) < 1e-9 * (1 + pa_mpjpe(pred, gt))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), spread=st.floats(0.01, 2.0))
def test_alignment_never_increases_squared_error(seed, spread):
    rng = np.random.default_rng(seed)
    gt = rng.normal(size=(24, 3))
    pred = gt + spread * rng.normal(size=(24, 3))
    aligned = procrustes_align(pred, gt)[3]
    assert ((aligned - gt) ** 2).sum() <= ((pred - gt) ** 2).sum() + 1e-12


def test_aligned_mean_distance_can_exceed_raw():
    # the alignment is least squares, MPJPE is a mean of distances: one badly
    # placed joint pulls the fit away from the joints that were already right
    gt = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], dtype=float)
    pred = gt.copy()
    pred[4] = [1.0, 1.0, -1.0]
    aligned = procrustes_align(pred, gt)[3]
    assert ((aligned - gt) ** 2).sum() < ((pred - gt) ** 2).sum()
    assert pa_mpjpe(pred, gt) > mpjpe(pred, gt)


def test_constant_offset_mpjpe():
    gt = np.zeros((24, 3))
    pred = gt + np.array([0.003, 0.0, 0.0])
    assert mpjpe(pred, gt) == pytest.approx(0.003)


def test_mpjpe_matches_loop(rng):
    pred, gt = rng.normal(size=(2, 24, 3))
    ref = sum(np.sqrt(sum((pred[j, k] - gt[j, k]) ** 2 for k in range(3))) for j in range(24)) / 24
    assert mpjpe(pred, gt) == pytest.approx(ref, rel=1e-12)


def test_degenerate_alignment():
    with pytest.raises(DegenerateAlignmentError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateAlignmentError):
        procrustes_align(line, line)
    with pytest.raises(DegenerateAlignmentError):
        procrustes_align(np.ones((5, 3)), np.random.default_rng(0).normal(size=(5, 3)))


def test_evaluate_ground_truth_scores_zero(skeleton, rng):
    gt = np.stack([random_params(rng) for _ in range(5)])
    report = evaluate(skeleton, gt, gt)
    assert report.mean_mpjpe < 1e-9 and report.mean_pa_mpjpe < 1e-9


def test_evaluate_ignores_camera(skeleton, rng):
    gt = np.stack([random_params(rng) for _ in range(5)])
    pred = gt.copy()
    pred[:, 79:] = rng.normal(size=(5, 6))
    assert evaluate(skeleton, pred, gt).mean_mpjpe < 1e-9


def test_evaluate_scores_in_mm_and_uses_last_iteration(skeleton, rng):
    gt = np.stack([random_params(rng) for _ in range(4)])
    first = np.zeros_like(gt)
    pred = np.stack([first, gt], axis=1)
    report = evaluate(skeleton, pred, gt)
    assert report.mean_pa_mpjpe < 1e-9
    X0 = joints_from_params(skeleton, first)
    Xg = joints_from_params(skeleton, gt)
    expected = np.mean([1000 * pa_mpjpe(a, b) for a, b in zip(X0, Xg)])
    assert report.curve_pa_mpjpe[0] == pytest.approx(expected)
    assert report.curve_pa_mpjpe[1] < 1e-9


def test_evaluate_empty():
    with pytest.raises(InvalidInputError):
        evaluate(None, np.zeros((0, 85)), np.zeros((0, 85)))
