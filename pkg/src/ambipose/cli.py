"""Command-line entry point: gen, train, eval, viz, bench, sweep-alpha.

Configuration precedence is built-in defaults < JSON config file < flags.
The global --seed fans out to independent streams (dataset, weight init,
shuffling, Monte Carlo draws, per-query evaluation) through fixed stream
tags, so one seed reproduces a whole pipeline byte-for-byte.

Exit codes: 0 success, 1 validation error, 2 runtime/numerical abort.

Environment: AMBIPOSE_OUT_DIR prefixes relative output paths;
AMBIPOSE_THREADS sets the sweep-alpha worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, scenes, trainer, viz
from .evaluation import RecallThreshold
from .geometry import PoseDistanceWeights
from .model import Architecture, load_checkpoint, predict_posterior, save_checkpoint
from .trainer import TrainConfig, TrainingDiverged


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_path(p) -> Path:
    base = os.environ.get("AMBIPOSE_OUT_DIR")
    p = Path(p)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _parse_thresholds(text):
    """'0.1:10,0.2:15' -> ((0.1, 10.0), (0.2, 15.0))."""
    out = []
    for part in text.split(","):
        try:
            t, r = part.split(":")
            out.append((float(t), float(r)))
        except ValueError as err:
            raise UsageError(f"bad threshold {part!r}; expected METERS:DEGREES") from err
    if not out:
        raise UsageError("no thresholds given")
    return tuple(out)


def _parse_pair(text, name):
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError(f"{name} expects two comma-separated values")
    return int(parts[0]), int(parts[1])


# ---------------------------------------------------------------------------
# Train configuration layering
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "alpha": float,
    "beta": float,
    "lambda_t": float,
    "lambda_r": float,
    "mc_samples": int,
    "batch_size": int,
    "epochs": int,
    "lr0": float,
    "n_lr_decay": int,
    "weight_decay": float,
    "mode": str,
    "seed": int,
    "d": int,
    "n_layers": int,
    "encoder_hidden": list,
}


def _build_train_config(args) -> TrainConfig:
    layered = {}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        for key, value in raw.items():
            if key == "dataset":
                if getattr(args, "dataset", None) is None:
                    args.dataset = str(value)
                continue
            if key not in _CONFIG_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            layered[key] = _CONFIG_KEYS[key](value)
    if getattr(args, "dataset", None) is None:
        raise UsageError("no dataset given (use --dataset or a config file entry)")
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            layered[key] = flag

    weights = PoseDistanceWeights(
        layered.pop("lambda_t", 5.0), layered.pop("lambda_r", 2.0)
    )
    arch = Architecture(
        d=layered.pop("d", 16),
        n_layers=layered.pop("n_layers", 3),
        encoder_hidden=tuple(layered.pop("encoder_hidden", (256, 256))),
    )
    layered["M"] = layered.pop("mc_samples", 1000)
    try:
        return TrainConfig(weights=weights, arch=arch, **layered)
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid training configuration: {err}") from err


def _add_train_flags(p):
    p.add_argument("--config", help="JSON config file (overridden by flags)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda-t", dest="lambda_t", type=float)
    p.add_argument("--lambda-r", dest="lambda_r", type=float)
    p.add_argument("--mc-samples", dest="mc_samples", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--n-lr-decay", dest="n_lr_decay", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--mode", choices=trainer.MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int, help="latent dimension")
    p.add_argument("--n-layers", dest="n_layers", type=int, help="pose-map hidden layers")


def _load_compatible(dataset_dir, checkpoint):
    dataset = scenes.load_dataset(dataset_dir)
    m, scene_id = load_checkpoint(checkpoint)
    obs_dim = dataset.train.observations.shape[1]
    if m.obs_dim != obs_dim:
        raise UsageError(
            f"dimension mismatch: dataset manifest obs_dim={obs_dim} but "
            f"checkpoint encoder expects {m.obs_dim}"
        )
    return dataset, m, scene_id


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args):
    if args.spec_file:
        entry = json.loads(Path(args.spec_file).read_text(encoding="utf-8"))
        spec = scenes.spec_from_manifest(entry.get("scene", entry))
    else:
        spec = scenes.builtin_scene(
            args.scene, noise_std=args.noise_std, distinguishing_strength=args.eta
        )
    out = _out_path(args.out)
    scenes.generate_dataset(spec, args.train, args.test, args.seed, out)
    print(
        f"dataset {spec.name}: k={spec.symmetry_order} obs_dim={spec.obs_dim} "
        f"train={args.train} test={args.test} seed={args.seed} -> {out}"
    )
    return 0


def cmd_train(args):
    cfg = _build_train_config(args)  # may resolve args.dataset from the config file
    dataset = scenes.load_dataset(args.dataset)
    m, report = trainer.train(dataset, cfg)

    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    save_checkpoint(ckpt, m, scene_id=dataset.spec.name)
    report.checkpoint_path = str(ckpt)
    (out / "train_report.csv").write_text(report.to_csv(), encoding="utf-8")
    final = report.epochs[-1]
    print(
        f"trained {cfg.mode} on {dataset.spec.name}: {cfg.epochs} epochs, "
        f"final err={final.err:.4f} kl={final.kl:.4f} -> {ckpt}"
    )
    return 0


def cmd_eval(args):
    dataset, m, _ = _load_compatible(args.dataset, args.checkpoint)
    report = evaluation.evaluate(
        dataset,
        m,
        thresholds=_parse_thresholds(args.thresholds),
        gamma=args.gamma,
        M=args.mc_samples,
        seed=args.seed,
        benchmark=args.benchmark,
    )
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "eval_report.txt").write_text(report.to_table(), encoding="utf-8")
    print(report.to_table(), end="")
    return 0


def cmd_viz(args):
    dataset, m, _ = _load_compatible(args.dataset, args.checkpoint)
    testset = dataset.test
    if not 0 <= args.query < len(testset):
        raise UsageError(f"query index {args.query} out of range [0, {len(testset)})")
    samples = predict_posterior(
        m, testset.observations[args.query], args.mc_samples,
        evaluation.query_seed(args.seed, args.query),
    )
    nx, ny = _parse_pair(args.bins, "--bins")
    if args.bounds:
        vals = [float(v) for v in args.bounds.split(",")]
        if len(vals) != 4:
            raise UsageError("--bounds expects x0,x1,y0,y1")
        bounds = tuple(vals)
    else:
        b = m.bounds
        bounds = (b.mins[0], b.maxs[0], b.mins[1], b.maxs[1])

    pos_path = _out_path(args.heatmap)
    pos_path.parent.mkdir(parents=True, exist_ok=True)
    viz.emit_heatmap_image(viz.position_heatmap(samples, bounds, nx, ny), pos_path)

    ori_path = _out_path(args.orientation)
    ori_path.parent.mkdir(parents=True, exist_ok=True)
    viz.emit_heatmap_image(viz.orientation_heatmap(samples, nx, ny), ori_path)
    print(f"wrote {pos_path} and {ori_path} (+ CSV sidecars)")
    return 0


def cmd_bench(args):
    m, _ = load_checkpoint(args.checkpoint)
    obs = np.zeros(m.obs_dim)
    mean, std = evaluation.benchmark_inference(m, obs, args.mc_samples, args.repeats)
    print(f"{mean:.3f} ± {std:.3f} ms")
    return 0


def _sweep_seed(base, alpha_index, run):
    # Documented derivation keeping (alpha, run) cells disjoint.
    return base * 1000003 + alpha_index * 1009 + run


def cmd_sweep_alpha(args):
    base_cfg = _build_train_config(args)  # may resolve args.dataset
    dataset = scenes.load_dataset(args.dataset)
    alphas = [float(a) for a in args.alphas.split(",")]
    trans_max, rot_max = _parse_thresholds(args.threshold)[0]
    th = RecallThreshold(trans_max, rot_max, args.gamma)

    def one(alpha_index, run):
        cfg = trainer.with_overrides(
            base_cfg,
            alpha=alphas[alpha_index],
            seed=_sweep_seed(base_cfg.seed, alpha_index, run),
        )
        m, _ = trainer.train(dataset, cfg)
        return evaluation.recall(dataset.test, m, th, M=cfg.M, seed=cfg.seed)

    jobs = [(ai, run) for ai in range(len(alphas)) for run in range(args.runs)]
    workers = int(os.environ.get("AMBIPOSE_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: one(*j), jobs))
    else:
        results = [one(*j) for j in jobs]

    by_alpha = {a: [] for a in alphas}
    lines = ["alpha,run,recall"]
    for (ai, run), rec in zip(jobs, results):
        lines.append(f"{alphas[ai]:g},{run},{rec:.6g}")
        by_alpha[alphas[ai]].append(rec)
    for a in alphas:
        vals = np.array(by_alpha[a])
        q = np.quantile(vals, [0.0, 0.25, 0.5, 0.75, 1.0])
        for name, value in zip(("min", "q1", "median", "q3", "max"), q):
            lines.append(f"{a:g},{name},{value:.6g}")
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"swept {len(alphas)} alphas x {args.runs} runs -> {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="ambipose", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a procedural scene dataset")
    p.add_argument("--scene", choices=scenes.scene_names())
    p.add_argument("--spec-file", help="JSON scene spec (manifest 'scene' schema)")
    p.add_argument("--train", type=int, default=900, help="training samples (default 900)")
    p.add_argument("--test", type=int, default=300, help="test samples (default 300)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=0.01)
    p.add_argument("--eta", type=float, default=None,
                   help="distinguishing strength override in [0, 1]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a pose regressor on a dataset")
    p.add_argument("--dataset", help="dataset dir (or 'dataset' key in --config)")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute recall/median/coverage metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--thresholds", default="0.1:10,0.2:15,0.3:20",
                   help="comma list of METERS:DEGREES (default 0.1:10,0.2:15,0.3:20)")
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--benchmark", action="store_true",
                   help="also time inference (makes the report non-reproducible)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="emit posterior heatmaps for one query")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", type=int, default=0)
    p.add_argument("--heatmap", default="position.ppm", help="position heatmap path")
    p.add_argument("--orientation", default="orientation.ppm",
                   help="orientation heatmap path")
    p.add_argument("--bins", default="100,100", help="NX,NY (default 100,100)")
    p.add_argument("--bounds", default=None, help="x0,x1,y0,y1 (default scene bounds)")
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("bench", help="time predict_posterior on one query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=100)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-alpha", help="train over an alpha grid, report recall stats")
    p.add_argument("--dataset", help="dataset dir (or 'dataset' key in --config)")
    p.add_argument("--alphas", default="0.01,0.05,0.20,0.50,1.00")
    p.add_argument("--runs", type=int, default=10, help="training runs per alpha (default 10)")
    p.add_argument("--threshold", default="0.1:10", help="METERS:DEGREES for recall")
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--out", required=True, help="output CSV path")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_alpha)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (TrainingDiverged, viz.MollweideConvergenceError, OSError) as err:
        print(f"abort: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
