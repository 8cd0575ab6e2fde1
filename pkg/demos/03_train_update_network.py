# Train a small update network for a few hundred steps and compare it with plain gradient descent.
# Full-size training (256 hidden units, 20k steps) is what the CLI's `train` command runs.
import logging

import numpy as np

from lgdfit.experiments import gd_baseline, learned_errors
from lgdfit.kinematics import default_skeleton
from lgdfit.metrics import evaluate
from lgdfit.trainer import TrainConfig, heldout_batch, new_network, sample_batch, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

model = default_skeleton()
config = TrainConfig(steps=600, hidden=64, learning_rate=1e-3, eval_every=200, seed=3)
net, rows = train(new_network(config), config, model)
print("training loss: first %.1f, last %.1f" % (rows[0]["train_loss"], rows[-1]["train_loss"]))

test = heldout_batch(model, config, 300)
val = sample_batch(model, config.sampler(), config, 99, 0, 300)
zero = evaluate(model, np.zeros_like(test.params), test.params).mean_pa_mpjpe
states, losses, report = learned_errors(net, model, test, 4)
step, scores, gd = gd_baseline(model, val, test, 4)

print("PA-MPJPE, mm-equivalent")
print("  all-zero pose         %.1f" % zero)
print("  gradient descent      %.1f  (step %g from the grid)" % (gd.mean_pa_mpjpe, step))
print("  learned, 4 updates    %.1f" % report.mean_pa_mpjpe)
print("  learned, per update  ", np.round(report.curve_pa_mpjpe, 1))
print("median reprojection loss per update:", np.round(np.median(losses, axis=1), 4))
