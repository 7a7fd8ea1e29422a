"""Command-line entry points: train, generate, evaluate, verify, synth.

Every run writes all artifacts under --out, starting with a manifest that
records the fully resolved configuration and seed so the run can be
reproduced bit for bit.

Exit codes: 0 success, 1 verification failure, 2 usage/config error,
3 runtime abort (non-finite loss or simulation overflow).
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, apply_override, build_dataset_spec, build_train_config, default_config, load_config_file
from .data_io import DataFormatError, load_csv, load_paths, save_paths
from .evaluation import default_eval_indices, joint_scatter_export, marginal_report
from .processes import ReferenceProcess, brownian, gbm, ou
from .rng import stream
from .sde import CheckpointError, SimulationError, load_checkpoint, simulate
from .training import TrainingAborted, fdm_train
from .verify import (
    check_concentration,
    check_properness,
    check_sensitivity,
    concentration_to_csv,
    properness_to_csv,
    sensitivity_to_csv,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _thread_cap(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FDMSDE_THREADS")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"FDMSDE_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _resolve_config(args) -> dict:
    if args.config is not None:
        cfg = load_config_file(args.config)
    else:
        cfg = default_config()
    for override in args.set or []:
        apply_override(cfg, override)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    return cfg


def _write_manifest(out_dir: Path, cfg: dict, args, artifacts: dict) -> Path:
    manifest = {
        "tool_version": __version__,
        "seed": cfg["train"]["seed"],
        "config": cfg,
        "threads": _thread_cap(args),
        "artifacts": artifacts,
        "started": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "finished": None,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=_jsonable))
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _finish_manifest(path: Path):
    doc = json.loads(path.read_text())
    doc["finished"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    path.write_text(json.dumps(doc, indent=2))


def _load_training_data(cfg: dict, data_path):
    if not Path(data_path).exists():
        raise CliError(f"data file not found: {data_path}")
    with open(data_path, newline="") as fh:
        first = fh.readline()
    if first.split(",")[0].strip() == "path_id":
        return load_paths(data_path)
    spec = build_dataset_spec(cfg, data_path)
    train, _test, _norm = load_csv(spec)
    return train


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = _load_training_data(cfg, args.data)
    train_cfg = build_train_config(cfg)
    artifacts = {
        "checkpoint": str(out_dir / "checkpoint.json"),
        "train_log": str(out_dir / "train_log.csv"),
    }
    manifest_path = _write_manifest(out_dir, cfg, args, artifacts)
    try:
        params, log = fdm_train(train_cfg, data, out_dir=str(out_dir))
    except TrainingAborted as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except SimulationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    log.to_csv(artifacts["train_log"])
    _finish_manifest(manifest_path)
    last = log.entries[-1]
    print(f"trained {train_cfg.steps} steps; final score {last['score']:.6f}")
    return EXIT_OK


def cmd_generate(args) -> int:
    params, sde_cfg = load_checkpoint(args.checkpoint)
    out_path = Path(args.out)
    if out_path.is_dir():
        out_path = out_path / "generated.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if args.count < 0:
        raise CliError(f"count must be nonnegative, got {args.count}")
    if args.count == 0:
        from .sde import PathsBatch

        batch = PathsBatch(np.array([0.0]), np.empty((0, 1, sde_cfg.d_x)))
    else:
        batch = simulate(params, sde_cfg, args.count, args.seed if args.seed is not None else 0)
    save_paths(batch, out_path)
    print(f"wrote {batch.n_paths} paths to {out_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    params, sde_cfg = load_checkpoint(args.checkpoint)
    heldout = load_paths(args.data)
    if heldout.n_times != sde_cfg.num_steps + 1:
        raise CliError(
            f"data grid has {heldout.n_times} points but the checkpointed model "
            f"simulates {sde_cfg.num_steps + 1}"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    indices = args.eval_indices or default_eval_indices(heldout.n_times)
    for i in indices:
        if not 0 <= i < heldout.n_times:
            raise CliError(f"evaluation index {i} outside grid of {heldout.n_times} points")

    def gen(n, s):
        return simulate(params, sde_cfg, n, s)

    report = marginal_report(
        gen,
        heldout,
        eval_indices=indices,
        batch_size=args.batch_size,
        num_batches=args.num_batches,
        seed=seed,
        replace=True,
    )
    report.to_csv(out_dir / "ks_report.csv")
    print(report.format_table())
    scatter_batch = simulate(params, sde_cfg, min(heldout.n_paths, 256), seed + 1)
    held_sub = heldout.subset(range(min(heldout.n_paths, 256)))
    dim_pair = (0, 1 if heldout.dim > 1 else 0)
    joint_scatter_export(scatter_batch, held_sub, dim_pair, indices, out_dir / "joint_scatter.csv")
    return EXIT_OK


def cmd_verify(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    grid = np.linspace(0.0, 1.0, args.grid_points)
    failed = False
    lines = []

    if args.which in ("properness", "all"):
        for label, q, p in (
            ("drift-mismatch", brownian(0.0, 1.0), brownian(0.5, 1.0)),
            ("diffusion-mismatch", ou(1.0, 0.0, 0.5), ou(1.0, 0.0, 1.0)),
        ):
            res = check_properness(q, p, grid, batch=args.batch_size, trials=args.trials, seed=seed)
            properness_to_csv(res, out_dir / f"properness_{label}.csv")
            lines.append(f"properness[{label}]: {res.verdict} (gap CI [{res.ci_low:.5f}, {res.ci_high:.5f}])")
            failed |= res.verdict == "FAIL"
    if args.which in ("concentration", "all"):
        res = check_concentration(
            brownian(0.0, 1.0), grid, trials=args.trials, seed=seed
        )
        concentration_to_csv(res, out_dir / "concentration.csv")
        fr = ", ".join(f"B={b}: {f:.3f}" for b, f in zip(res.batch_sizes, res.violation_fractions))
        lines.append(f"concentration: {res.verdict} (violation fractions {fr})")
        failed |= res.verdict == "FAIL"
    if args.which in ("sensitivity", "all"):
        res = check_sensitivity(
            brownian(0.0, 1.0), grid=grid, batch=args.batch_size, trials=args.trials, seed=seed
        )
        sensitivity_to_csv(res, out_dir / "sensitivity.csv")
        lines.append(f"sensitivity: {res.verdict} (slope {res.slope:.4f}, R^2 {res.r_squared:.4f})")
        failed |= res.verdict == "FAIL"

    for line in lines:
        print(line)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _build_process(args) -> ReferenceProcess:
    if args.process == "brownian":
        return brownian(args.drift, args.scale)
    if args.process == "ou":
        return ou(args.rate, args.mean, args.scale)
    if args.process == "gbm":
        return gbm(args.drift, args.vol, args.x0)
    raise CliError(f"unknown process {args.process!r}")


def cmd_synth(args) -> int:
    from .processes import simulate_exact

    proc = _build_process(args)
    grid = np.linspace(0.0, args.horizon, args.grid_points)
    seed = args.seed if args.seed is not None else 0
    batch = simulate_exact(proc, grid, args.count, seed)
    out_path = Path(args.out)
    if out_path.is_dir():
        out_path = out_path / f"{args.process}.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_paths(batch, out_path)
    print(f"wrote {batch.n_paths} {args.process} paths to {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdmsde", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")

    p_train = sub.add_parser("train", help="train a generator on a dataset")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True)
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="sample paths from a checkpoint")
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.add_argument("--count", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    common(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_eval = sub.add_parser("evaluate", help="KS evaluation of a checkpoint against held-out paths")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--batch-size", type=int, default=128)
    p_eval.add_argument("--num-batches", type=int, default=100)
    p_eval.add_argument("--eval-indices", type=int, nargs="*", default=None)
    common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_ver = sub.add_parser("verify", help="statistical checks of the scoring rule's guarantees")
    p_ver.add_argument("--which", choices=["properness", "concentration", "sensitivity", "all"], default="all")
    p_ver.add_argument("--out", required=True)
    p_ver.add_argument("--trials", type=int, default=500)
    p_ver.add_argument("--batch-size", type=int, default=256)
    p_ver.add_argument("--grid-points", type=int, default=65)
    common(p_ver)
    p_ver.set_defaults(func=cmd_verify)

    p_syn = sub.add_parser("synth", help="write a synthetic reference-process dataset")
    p_syn.add_argument("--process", choices=["brownian", "ou", "gbm"], required=True)
    p_syn.add_argument("--count", type=int, required=True)
    p_syn.add_argument("--out", required=True)
    p_syn.add_argument("--grid-points", type=int, default=64)
    p_syn.add_argument("--horizon", type=float, default=1.0)
    p_syn.add_argument("--drift", type=float, default=0.0)
    p_syn.add_argument("--scale", type=float, default=1.0)
    p_syn.add_argument("--rate", type=float, default=1.0)
    p_syn.add_argument("--mean", type=float, default=0.0)
    p_syn.add_argument("--vol", type=float, default=0.2)
    p_syn.add_argument("--x0", type=float, default=1.0)
    common(p_syn)
    p_syn.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, DataFormatError, CheckpointError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return getattr(err, "code", EXIT_USAGE)
    except FileNotFoundError as err:
        print(f"error: file not found: {err.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, SimulationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
