# The reprojection loss and its hand-written gradient, checked against finite differences.
import numpy as np

from lgdfit.diffcore import Keypoints2D, ModelParams, finite_diff_grad, gradcheck_error, reproj_grad, reproj_loss
from lgdfit.kinematics import default_skeleton
from lgdfit.trainer import TrainConfig, sample_instance

model = default_skeleton()
config = TrainConfig()
rng = np.random.default_rng(0)
gt, target = sample_instance(config.sampler(), config, rng, model)
print("visible joints:", target.n_visible, "of", model.joint_count)

start = ModelParams.zeros()
print("loss at the all-zero state:", reproj_loss(start, target, model))
print("loss at the ground truth:", reproj_loss(gt, target, model))

guess = ModelParams(gt.vector + rng.normal(scale=0.1, size=85))
g = reproj_grad(guess, target, model)
fd = finite_diff_grad(guess, target, model)
print("largest gradient entries:", np.argsort(-np.abs(g))[:5])
print("relative error vs finite differences: %.2e" % gradcheck_error(g, fd))

# hidden joints contribute nothing: moving their 2D targets leaves the loss unchanged
moved = target.points.copy()
moved[~target.visibility] += 10.0
print("loss with hidden targets moved:", reproj_loss(guess, Keypoints2D(moved, target.visibility), model),
      "vs", reproj_loss(guess, target, model))
