"""Command-line entry point: ``usm <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save
from .config import ConfigError, load_config, model_config_from
from .data import SyntheticDataset, class_mixture, dataset_sample, two_mode_mixture
from .flow import NumericalError, euler_sample, make_optimizer, train_step
from .images import emit_image
from .metrics import MetricsWriter, eval_moments
from .net import ModelConfig, init_params
from .scan_paths import N_CONFIGS, generate_scan
from .tensor import NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("usm")

# Run options read from the config file; command-line flags override them.
RUN_DEFAULTS = {
    "steps": 1000,
    "batch": 8,
    "lr": 1e-4,
    "optimizer": "adam",
    "dataset": "gauss-mix",
    "sample_steps": 25,
    "n_samples": 16,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="usm", description="U-shaped selective-scan diffusion backbone.")
    parser.add_argument("--version", action="version", version=f"usm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train on a synthetic dataset")
    _common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--dataset", choices=["gauss-mix", "checkerboard", "class-conditional"])
    p.add_argument("--log-every", type=int, default=100)

    p = sub.add_parser("sample", help="draw samples from a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("-n", "--n-samples", type=int)
    p.add_argument("-T", "--sample-steps", type=int)
    p.add_argument("--label", type=int, help="class id for class-conditional models")

    p = sub.add_parser("eval", help="moment distance between samples and held-out data")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("-n", "--n-samples", type=int, default=512)
    p.add_argument("-T", "--sample-steps", type=int)
    p.add_argument("--n-reference", type=int, default=8192)

    p = sub.add_parser("profile", help="analytic MAC counts and forward timing")
    _common(p)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--no-flat", action="store_true", help="skip timing the flat reference")

    p = sub.add_parser("gradcheck", help="full-model gradient check")
    _common(p)
    p.add_argument("--coords", type=int, default=200, help="coordinates per parameter group")

    p = sub.add_parser("scan-dump", help="write scan orders, one index per line")
    _common(p)
    p.add_argument("--scan-config", type=int, help="one config id (default: all 8)")
    p.add_argument("--h", type=int)
    p.add_argument("--w", type=int)
    return parser


def _settings(args) -> tuple[ModelConfig, dict]:
    if args.config is not None:
        if not args.config.is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        config, extra = load_config(args.config)
    else:
        config, extra = model_config_from({})
    run = dict(RUN_DEFAULTS)
    for k, v in extra.items():
        if k not in run:
            raise ConfigError(f"unknown config key {k!r}")
        run[k] = type(RUN_DEFAULTS[k])(v)
    for k in run:
        flag = getattr(args, k, None)
        if flag is not None:
            run[k] = flag
    return config, run


def _dataset(kind: str, config: ModelConfig, seed: int) -> SyntheticDataset:
    if kind == "gauss-mix":
        return two_mode_mixture(config.c, config.h, config.w, seed=seed)
    if kind == "class-conditional":
        return class_mixture(max(config.n_classes, 2), config.c, config.h, config.w, seed=seed)
    return SyntheticDataset("checkerboard", config.c, config.h, config.w, seed=seed)


def cmd_train(args) -> int:
    config, run = _settings(args)
    if run["steps"] < 0 or run["batch"] < 1:
        raise UsageError("steps must be >= 0 and batch >= 1")
    if run["dataset"] == "class-conditional" and not (config.use_text and config.n_classes > 1):
        raise UsageError("class-conditional training needs use_text = true and n_classes >= 2")
    args.out.mkdir(parents=True, exist_ok=True)
    params = init_params(config, args.seed)
    opt = make_optimizer(run["optimizer"], params, run["lr"])
    stream = _dataset(run["dataset"], config, args.seed).stream()
    rng = np.random.default_rng(args.seed + 1)
    with MetricsWriter(args.out / "metrics.csv") as writer:
        for step in range(1, run["steps"] + 1):
            batch = stream.next(run["batch"])
            x, labels = batch if isinstance(batch, tuple) else (batch, None)
            stats = train_step(params, config, x, rng, opt, labels=labels, step=step)
            writer.write(stats)
            if step % args.log_every == 0:
                log.info("step %d loss %.5f grad_norm %.4f", step, stats.loss, stats.grad_norm)
    extra = {k: run[k] for k in ("steps", "batch", "lr", "optimizer", "dataset")}
    checkpoint_save(params, config, args.out / "model.usmc", extra={"seed": args.seed, **extra})
    print(f"wrote {args.out / 'model.usmc'} and {args.out / 'metrics.csv'}")
    return EXIT_OK


def _load(args):
    params, config, extra = checkpoint_load(args.checkpoint)
    return params, config, extra


def cmd_sample(args) -> int:
    params, config, extra = _load(args)
    _, run = _settings(args)
    n, T = run["n_samples"], run["sample_steps"]
    ctx = None
    if args.label is not None:
        if params.class_embed is None:
            raise UsageError("--label given but the model has no class table")
        if not 0 <= args.label < config.n_classes:
            raise UsageError(f"label must lie in [0, {config.n_classes})")
        from .net import class_context
        ctx = class_context(params, np.full(n, args.label))
    z = euler_sample(params, config, T, np.random.default_rng(args.seed), n=n, ctx=ctx)
    if not np.all(np.isfinite(z)):
        raise NumericalError("sampler produced non-finite values")
    args.out.mkdir(parents=True, exist_ok=True)
    np.save(args.out / "samples.npy", z)
    if config.c in (1, 3, 4):
        suffix = "pgm" if config.c == 1 else "ppm"
        emit_image(z, args.out / f"montage.{suffix}")
    print(f"wrote {n} samples to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, config, extra = _load(args)
    _, run = _settings(args)
    seed = int(extra.get("seed", 0))
    spec = _dataset(extra.get("dataset", "gauss-mix"), config, seed)
    held_out = dataset_sample(spec, args.n_reference, np.random.default_rng(seed + 10_000))
    if isinstance(held_out, tuple):
        held_out = held_out[0]
    z = euler_sample(params, config, run["sample_steps"], np.random.default_rng(args.seed), n=args.n_samples)
    dist = eval_moments(z, held_out)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "eval.txt").write_text(f"moment_distance = {dist!r}\n", encoding="utf-8")
    print(f"moment distance {dist:.6f}")
    return EXIT_OK


def cmd_profile(args) -> int:
    from .profiler import profile_run

    config, _ = _settings(args)
    report = profile_run(config, reps=args.reps, seed=args.seed, flat=not args.no_flat)
    args.out.mkdir(parents=True, exist_ok=True)
    report.write_csv(args.out / "profile.csv")
    (args.out / "flops.txt").write_text(report.cost.summary() + "\n", encoding="utf-8")
    print(report.cost.summary())
    for model in ("usm", "flat") if not args.no_flat else ("usm",):
        mean, sd = report.stats(model)
        print(f"{model}: {mean:.2f} +- {sd:.2f} ms/forward, peak live elements {report.peak(model)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_results, model_gradcheck

    config, _ = _settings(args)
    results = model_gradcheck(config, seed=args.seed, coords_per_group=args.coords)
    text = format_results(results)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "gradcheck.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    total = sum(r.n_coords for r in results)
    ok = sum(r.n_ok for r in results)
    print(f"{ok}/{total} coordinates within tolerance")
    return EXIT_OK if ok >= 0.99 * total else EXIT_NUMERIC


def cmd_scan_dump(args) -> int:
    config, _ = _settings(args)
    h = args.h if args.h is not None else config.h
    w = args.w if args.w is not None else config.w
    ids = range(N_CONFIGS) if args.scan_config is None else [args.scan_config]
    args.out.mkdir(parents=True, exist_ok=True)
    for cid in ids:
        path = generate_scan(cid, h, w)
        target = args.out / f"scan_{cid}_{h}x{w}.txt"
        target.write_text("".join(f"{i}\n" for i in path.perm), encoding="ascii")
        print(target)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "profile": cmd_profile,
    "gradcheck": cmd_gradcheck,
    "scan-dump": cmd_scan_dump,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, NonFiniteError, FloatingPointError) as exc:
        print(f"usm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"usm: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
