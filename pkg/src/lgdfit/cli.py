"""Command-line entry point: ``lgdfit <command> [options]``.

Exit codes: 0 success, 1 failed check, 2 config error, 3 data error,
4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments
from .diffcore import Keypoints2D, finite_diff_grad, gradcheck_error, reproj_grad, reproj_loss
from .errors import ConfigError, DegenerateTargetError, DivergenceError, LGDError
from .fitter import fit_direct_lifting, fit_learned, fit_vanilla_gd
from .io import (
    POSE_RECORD_DIM,
    load_pose_dataset,
    read_keypoints,
    save_pose_dataset,
    write_fit_results,
    write_metrics_csv,
)
from .kinematics import NUM_BETAS, default_skeleton, load_skeleton, save_skeleton
from .trainer import TrainConfig, heldout_batch, new_network, sample_batch, train
from .updatenet import ABLATION_MODES, load_checkpoint, save_checkpoint

log = logging.getLogger("lgdfit")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_train_config(args) -> TrainConfig:
    d = {}
    if args.config:
        d = TrainConfig.load(args.config).to_dict()
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        d[key] = _parse_value(val)
    if args.seed is not None:
        d["seed"] = args.seed
    if getattr(args, "ablation", None):
        d["ablation"] = args.ablation
    if getattr(args, "unroll", None) is not None:
        d["unroll"] = args.unroll
    return TrainConfig.from_dict(d)


def _skeleton(args):
    if args.skeleton:
        if not Path(args.skeleton).exists():
            raise ConfigError(f"skeleton file {args.skeleton} does not exist")
        return load_skeleton(args.skeleton)
    return default_skeleton()


def _out(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _require(path, what):
    if not path:
        raise ConfigError(f"--{what} is required")
    if not Path(path).exists():
        raise ConfigError(f"{what} file {path} does not exist")
    return Path(path)


def cmd_generate_data(args):
    config = load_train_config(args)
    model = _skeleton(args)
    if args.count < 0:
        raise ConfigError("--count must be non-negative")
    rng = np.random.default_rng(config.seed)
    theta, beta = config.sampler().sample(rng, args.count)
    records = np.concatenate([theta.reshape(args.count, POSE_RECORD_DIM - NUM_BETAS), beta], 1)
    out = _out(args)
    save_pose_dataset(out / "poses.lgdpose", records, model.name, config.seed)
    save_skeleton(model, out / "skeleton.json")
    print(f"wrote {args.count} poses to {out / 'poses.lgdpose'}")
    return 0


def cmd_train(args):
    config = load_train_config(args)
    model = _skeleton(args)
    dataset = load_pose_dataset(_require(args.dataset, "dataset"))[0] if args.dataset else None
    out = _out(args)
    net = load_checkpoint(_require(args.checkpoint, "checkpoint")) if args.checkpoint else new_network(config)
    config.save(out / "config.json")
    try:
        net, rows = train(net, config, model, dataset=dataset, checkpoint_dir=out)
    except DivergenceError:
        log.error("training diverged; last good checkpoint retained in %s", out)
        raise
    save_checkpoint(net, out / "final.lgdnet", extra={"seed": config.seed, "steps": config.steps})
    write_metrics_csv(out / "metrics.csv", rows, config.seed)
    print(f"trained {config.steps} steps; checkpoint {out / 'final.lgdnet'}")
    return 0


def _fit_one(args, net, target, model):
    if args.fitter == "learned":
        return fit_learned(net, target, model, n_iters=args.iters)
    if args.fitter == "gd":
        return fit_vanilla_gd(target, model, args.step_size, n_iters=args.iters)
    params = fit_direct_lifting(net, target)
    return params


def cmd_fit(args):
    model = _skeleton(args)
    frames = read_keypoints(_require(args.keypoints, "keypoints"))
    net = None
    if args.fitter in ("learned", "lift"):
        net = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    out = _out(args)
    rows = []
    for frame, target in frames:
        try:
            result = _fit_one(args, net, target, model)
        except DegenerateTargetError as exc:
            rows.append({"frame": frame, "status": "skipped", "reason": str(exc)})
            continue
        if hasattr(result, "states"):
            result.write_csv(out / f"trace_{frame}.csv", frame=frame)
            params, loss = result.final.vector, result.losses[-1]
        else:
            params, loss = result.vector, reproj_loss(result, target, model)
        rows.append({"frame": frame, "status": "ok", "final_loss": loss, "params": params.tolist()})
    write_fit_results(out / "params.jsonl", rows)
    n_ok = sum(r["status"] == "ok" for r in rows)
    print(f"fitted {n_ok} of {len(rows)} frames; results in {out / 'params.jsonl'}")
    return 0


def cmd_eval(args):
    config = load_train_config(args)
    model = _skeleton(args)
    batch = heldout_batch(model, config, args.count)
    if args.fitter == "gd":
        val = sample_batch(model, config.sampler(), config, config.seed + 1, 2**31 - 2, args.count)
        lam, _, report = experiments.gd_baseline(model, val, batch, args.iters)
        label = f"gd step={lam}"
    else:
        net = load_checkpoint(_require(args.checkpoint, "checkpoint"))
        if args.fitter == "lift":
            report = experiments.lifting_error(net, model, batch)
        else:
            report = experiments.learned_errors(net, model, batch, args.iters, config.ablation)[2]
        label = args.fitter
    out = _out(args)
    report.write_csv(out / "report.csv", header_comment=f"seed={config.seed} fitter={label}")
    (out / "summary.txt").write_text(f"fitter: {label}\nseed: {config.seed}\n{report.summary()}\n")
    print(report.summary())
    return 0


def cmd_gradcheck(args):
    model = _skeleton(args)
    seed = 0 if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    worst, worst_idx, worst_case = 0.0, -1, -1
    t0 = time.perf_counter()
    for case in range(args.count):
        theta = rng.normal(scale=0.5, size=85)
        theta[-1] = rng.uniform(0.5, 1.5)
        vis = rng.random(model.joint_count) >= 0.2
        vis[rng.integers(model.joint_count)] = True
        target = Keypoints2D(rng.normal(scale=0.5, size=(model.joint_count, 2)), vis)
        analytic = reproj_grad(theta, target, model)
        numeric = finite_diff_grad(theta, target, model, step=args.step)
        err = gradcheck_error(analytic, numeric)
        if err > worst:
            worst, worst_case = err, case
            worst_idx = int(np.argmax(np.abs(analytic - numeric)))
    elapsed = time.perf_counter() - t0
    ok = worst < args.tol
    print(f"gradcheck seed={seed} cases={args.count} max_rel_error={worst:.3e} "
          f"worst_case={worst_case} worst_index={worst_idx} time={elapsed:.2f}s {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_ablate(args):
    base = load_train_config(args)
    model = _skeleton(args)
    heldout = heldout_batch(model, base, args.count)
    out = _out(args)
    cache = out / "nets"
    with open(out / "ablation.csv", "w", newline="") as fh:
        fh.write(f"# seed={base.seed} steps={base.steps}\n")
        w = csv.writer(fh)
        w.writerow(["table", "variant", "heldout_pa_mpjpe"])
        if args.table in ("components", "all"):
            for mode, err in experiments.component_ablation(base, model, heldout, cache):
                w.writerow(["components", mode, repr(err)])
                print(f"components {mode:12s} {err:.2f}")
        if args.table in ("iterations", "all"):
            for n, err in experiments.iteration_ablation(base, model, heldout, cache_dir=cache):
                w.writerow(["iterations", n, repr(err)])
                print(f"iterations {n:<12d} {err:.2f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="lgdfit", description="Learned gradient descent body fitting")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, train_opts=True):
        sp.add_argument("--config", help="training config JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--skeleton", help="skeleton definition file")
        sp.add_argument("--out", default="out")
        if train_opts:
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")

    sp = sub.add_parser("generate-data", help="sample a pose dataset")
    common(sp)
    sp.add_argument("--count", type=int, default=10000)
    sp.set_defaults(func=cmd_generate_data)

    sp = sub.add_parser("train", help="train the update network")
    common(sp)
    sp.add_argument("--dataset")
    sp.add_argument("--checkpoint", help="resume from this checkpoint")
    sp.add_argument("--ablation", choices=ABLATION_MODES)
    sp.add_argument("--iters", dest="unroll", type=int, help="unroll length")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("fit", help="fit keypoint frames")
    common(sp, train_opts=False)
    sp.add_argument("--keypoints", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--fitter", choices=("learned", "gd", "lift"), default="learned")
    sp.add_argument("--iters", type=int, default=4)
    sp.add_argument("--step-size", type=float, default=0.1)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("eval", help="evaluate a fitter on a synthetic held-out set")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--fitter", choices=("learned", "gd", "lift"), default="learned")
    sp.add_argument("--iters", type=int, default=4)
    sp.add_argument("--ablation", choices=ABLATION_MODES)
    sp.add_argument("--count", type=int, default=1000)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    common(sp, train_opts=False)
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--step", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("ablate", help="train and compare ablation variants")
    common(sp)
    sp.add_argument("--table", choices=("components", "iterations", "all"), default="all")
    sp.add_argument("--count", type=int, default=1000)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LGDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
