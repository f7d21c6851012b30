"""Command-line interface: ``rigidpose <subcommand> ...``.

Any failure prints one JSON line ``{"error": <code>, "message": <text>}`` to
stderr and exits with status 2. ``grad-check`` exits with status 1 when a
check exceeds the tolerance.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import formats
from .errors import ConfigError, ParseError, RigidPoseError
from .geometry import pose_error, weighted_kabsch, weighted_objective
from .kabsch_grad import grad_check, random_instance
from .metrics import HIST_TRUNCATION, aggregate, cumulative_histogram, depth_stats, pooled_depth_stats
from .synth import NoiseModel, SceneConfig, corrupt, generate_frame, to_correspondences
from .weighting import OptimizerConfig, optimize_weights

GRAD_TOL = 1e-4
THREADS_ENV = "RIGIDPOSE_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return n


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(text.encode("utf-8"))


def _csv(rows) -> str:
    return "".join(",".join(str(cell) for cell in row) + "\n" for row in rows)


# -- align -------------------------------------------------------------------


def cmd_align(args) -> int:
    c = formats.load_correspondences(args.input)
    if args.weights == "uniform":
        c = c.with_weights(np.ones(len(c)))
    elif args.weights != "file":
        c = c.with_weights(formats.load_weights(args.weights))
    pose = weighted_kabsch(c)
    formats.save_pose_json(args.output, pose, weighted_objective(c, pose))
    return 0


# -- simulate ----------------------------------------------------------------


def _load_sim_config(path, seed: int) -> tuple[SceneConfig, NoiseModel]:
    d = formats.load_json(path) if path else {}
    if not isinstance(d, dict):
        raise ConfigError("simulation config must be a JSON object")
    noise = dict(d.get("noise", {}))
    noise.setdefault("seed", seed)
    try:
        return SceneConfig.from_dict(d.get("scene", {})), NoiseModel.from_dict(noise)
    except (TypeError, KeyError) as e:
        raise ConfigError(f"bad simulation config: {e}") from None


def cmd_simulate(args) -> int:
    scene, noise = _load_sim_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.frames):
        f = corrupt(generate_frame(scene, seed=args.seed, frame_index=i), noise, frame_index=i)
        formats.save_frame(out / f"{f.frame_id}.json", f)
        if args.export_depth:
            for kind, depth in (("gt", f.gt_depth), ("pred", f.pred_depth)):
                (out / f"depth_{kind}").mkdir(exist_ok=True)
                formats.save_depth_image(out / f"depth_{kind}" / f"{f.frame_id}.png", depth)
            formats.save_pose_txt(out / f"{f.frame_id}.pose.txt", f.gt_pose)
    return 0


# -- grad-check --------------------------------------------------------------


def cmd_grad_check(args) -> int:
    rows = [["instance", "n", "noise", "zero_weights", "max_relative_error", "worst_index", "analytic", "numeric", "status"]]
    failed = False
    for i in range(args.n):
        n = args.sizes[i % len(args.sizes)]
        noise = args.noise[(i // len(args.sizes)) % len(args.noise)]
        zeros = 1 if (i % 5 == 4 and n > 3) else 0
        rng = np.random.default_rng([args.seed, i])
        c = random_instance(rng, n, noise, zero_weights=zeros)
        try:
            r = grad_check(c, seed=int(rng.integers(2**63)), max_params=args.max_params)
        except RigidPoseError as e:
            rows.append([i, n, noise, zeros, "", "", "", "", e.code])
            failed = True
            continue
        ok = r.max_relative_error <= GRAD_TOL
        failed |= not ok
        rows.append(
            [i, n, noise, zeros, "%.6g" % r.max_relative_error, r.worst_parameter_index,
             "%.6g" % r.analytic, "%.6g" % r.numeric, "pass" if ok else "FAIL"]
        )
    text = _csv(rows)
    sys.stdout.write(text)
    if args.out:
        _write(args.out, text)
    return 1 if failed else 0


# -- optimize ----------------------------------------------------------------


def _load_frames(directory):
    return [formats.load_frame(p) for p in formats.frame_paths(directory)]


def cmd_optimize(args) -> int:
    cfg = OptimizerConfig.from_dict(formats.load_json(args.config)) if args.config else OptimizerConfig()
    frames = _load_frames(args.frames)
    data = [(to_correspondences(f), f.gt_pose) for f in frames]
    result = optimize_weights(data, cfg, seed=args.seed, workers=worker_count())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f, res in zip(frames, result.frames):
        if res.logits is None:
            sys.stderr.write(json.dumps({"warning": "frame-aborted", "frame": f.frame_id, "message": res.error}) + "\n")
            continue
        formats.save_weights(out / f"{f.frame_id}.csv", res.logits.weights)
    rows = [["epoch", "mean_l_pose"]] + [[k, formats.fmt(x)] for k, x in enumerate(result.loss_trace)]
    _write(args.trace, _csv(rows))
    return 0 if all(r.logits is not None for r in result.frames) else 2


# -- eval --------------------------------------------------------------------


def _frame_error(job):
    f, weights_dir = job
    c = to_correspondences(f)
    if weights_dir is not None:
        c = c.with_weights(formats.load_weights(Path(weights_dir) / f"{f.frame_id}.csv"))
    return f.frame_id, pose_error(weighted_kabsch(c), f.gt_pose)


def cmd_eval(args) -> int:
    frames = _load_frames(args.frames)
    jobs = [(f, args.weights) for f in frames]
    workers = worker_count()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_frame_error, jobs))
    else:
        results = dict(map(_frame_error, jobs))
    ids = sorted(results)
    errors = [results[k] for k in ids]
    stats = aggregate(errors)
    report = {
        "stats": stats.to_dict(),
        "frames": [{"frame_id": k, "position_m": results[k].position_m, "rotation_deg": results[k].rotation_deg} for k in ids],
    }
    _write(args.out, formats.dumps_json(report))
    rows = [["axis", "edge", "fraction"]]
    for axis in ("position", "rotation"):
        h = cumulative_histogram(errors, axis, HIST_TRUNCATION[axis], args.bins)
        rows += [[axis, formats.fmt(e), formats.fmt(x)] for e, x in zip(h.edges, h.fractions)]
    _write(args.hist, _csv(rows))
    return 0


# -- depth-eval --------------------------------------------------------------


def _depth_files(directory) -> dict[str, Path]:
    files = {p.stem: p for p in sorted(Path(directory).iterdir()) if p.suffix.lower() in (".png", ".pgm")}
    if not files:
        raise ParseError("no depth images (*.png, *.pgm) found", directory)
    return files


def cmd_depth_eval(args) -> int:
    pred, gt = _depth_files(args.pred), _depth_files(args.gt)
    missing = sorted(set(pred) ^ set(gt))
    if missing:
        raise ParseError(f"unmatched depth images: {', '.join(missing)}", args.pred)
    header = ["frame", "mean_abs_error_m", "acc_0125", "acc_025", "acc_05", "count"]
    rows = [header]
    pairs = []
    for name in sorted(pred):
        p, g = formats.load_depth_image(pred[name]), formats.load_depth_image(gt[name])
        s = depth_stats(p, g)
        pairs.append((p, g))
        rows.append([name, formats.fmt(s.mean_abs_error_m), formats.fmt(s.acc_0125), formats.fmt(s.acc_025), formats.fmt(s.acc_05), s.count])
    s = pooled_depth_stats(pairs)
    rows.append(["ALL", formats.fmt(s.mean_abs_error_m), formats.fmt(s.acc_0125), formats.fmt(s.acc_025), formats.fmt(s.acc_05), s.count])
    _write(args.out, _csv(rows))
    return 0


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rigidpose", description="Direct pose estimation by weighted Kabsch alignment.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="solve weighted Kabsch for a correspondence CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--weights", default="file", help="'file' (CSV w column), 'uniform', or a weights CSV path")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("simulate", help="write synthetic frames")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--export-depth", action="store_true", help="also write depth PNGs and pose text files")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("grad-check", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--sizes", type=int, nargs="+", default=[3, 10, 100, 4800])
    p.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.01, 0.1])
    p.add_argument("--max-params", type=int, default=256)
    p.add_argument("--out")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("optimize", help="fit per-correspondence weights on simulated frames")
    p.add_argument("--frames", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="pose error statistics and cumulative histograms")
    p.add_argument("--frames", required=True)
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.add_argument("--hist", required=True)
    p.add_argument("--bins", type=int, default=100)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("depth-eval", help="depth accuracy statistics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_depth_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RigidPoseError as e:
        code, message = e.code, str(e)
    except OSError as e:
        code, message = "io-error", f"{e.filename}: {e.strerror}" if e.filename else str(e)
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return 2


if __name__ == "__main__":
    sys.exit(main())
