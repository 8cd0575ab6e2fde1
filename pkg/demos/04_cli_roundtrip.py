# Drive the command-line tool end to end in a scratch directory:
# write keypoint frames, train a tiny network, fit the frames, and read the results back.
import tempfile
from pathlib import Path

import numpy as np

from lgdfit.cli import main
from lgdfit.io import read_fit_results, write_keypoints
from lgdfit.kinematics import default_skeleton
from lgdfit.trainer import TrainConfig, sample_batch

work = Path(tempfile.mkdtemp(prefix="lgdfit_demo_"))
model = default_skeleton()
config = TrainConfig(batch_size=5, dropout_prob=0.3)
frames = sample_batch(model, config.sampler(), config, seed=1, step=0).targets()
write_keypoints(work / "frames.jsonl", enumerate(frames))
print("wrote", len(frames), "frames; visible joints:", [t.n_visible for t in frames])

tiny = ["--set", "hidden=32", "--set", "steps=200", "--set", "learning_rate=0.001", "--set", "eval_every=100"]
print("train ->", main(["train", "--out", str(work / "run"), *tiny]))
print("fit   ->", main(["fit", "--keypoints", str(work / "frames.jsonl"),
                         "--checkpoint", str(work / "run" / "final.lgdnet"), "--out", str(work / "fit")]))
for row in read_fit_results(work / "fit" / "params.jsonl"):
    print(row["frame"], row["status"], "final loss %.4f" % row["final_loss"], "scale %.3f" % row["params"][-1])
print("gradcheck ->", main(["gradcheck", "--count", "20"]))

# malformed input produces a line-numbered error and exit code 3
(work / "bad.jsonl").write_text((work / "frames.jsonl").read_text() + "{oops\n")
print("bad file ->", main(["fit", "--keypoints", str(work / "bad.jsonl"), "--fitter", "gd", "--out", str(work / "x")]))
print("artifacts in", work)
print("mean scale of fits:", np.mean([r["params"][-1] for r in read_fit_results(work / "fit" / "params.jsonl")]))
