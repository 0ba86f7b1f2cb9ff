"""Command line entry point: train, eval, ablate, gradcheck, gen-data.

Exit codes: 0 success, 2 usage or config error, 3 runtime or numeric failure.
Environment: ``IIMT_OUT_DIR`` sets the default output directory and
``IIMT_VERBOSITY`` (0 quiet, 1 info, 2 debug) the log level. Nothing else is
read from the environment.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .checkpoint import restore
from .config import IimtConfig, dump_config, load_config
from .data import GENERATORS, DomainDataset, gen_mini_digits, gen_shifted_blobs, gen_two_moons, load_dataset, save_dataset
from .errors import ConfigError, IimtError, NumericError, ValidationError
from .gradsuite import SUITE_LOSSES, run_suite
from .models import init_params
from .optim import make_optimizer
from .trainer import (
    DivergenceError,
    ablation_csv,
    ablation_text,
    build_datasets,
    evaluate,
    model_config,
    run_ablation,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
ENV_OUT_DIR = "IIMT_OUT_DIR"
ENV_VERBOSITY = "IIMT_VERBOSITY"

log = logging.getLogger("iimt")


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------------


def _setup_logging(verbose: int) -> None:
    env = os.environ.get(ENV_VERBOSITY)
    if env is not None:
        try:
            verbose = int(env)
        except ValueError:
            raise UsageError(f"{ENV_VERBOSITY} must be 0, 1 or 2, got {env!r}") from None
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr, force=True)


def _out_dir(args, default: str) -> Path:
    out = args.out or os.environ.get(ENV_OUT_DIR) or default
    return Path(out)


def _load(args) -> IimtConfig:
    cfg = load_config(args.config) if args.config else IimtConfig()
    overrides: Dict[str, dict] = {}
    if getattr(args, "seed", None) is not None:
        overrides["train"] = {"seed": args.seed}
    if getattr(args, "wt_max", None) is not None:
        overrides["loss"] = {"w_t_max": args.wt_max}
    if getattr(args, "steps", None) is not None:
        overrides.setdefault("train", {})["total_steps"] = args.steps
    if overrides:
        cfg = cfg.replace(**overrides)
    cfg.validate()
    return cfg


def _dataset_manifest(ds: DomainDataset) -> dict:
    digest = hashlib.sha256(ds.samples.tobytes())
    if ds.truth is not None:
        digest.update(ds.truth.tobytes())
    return {"domain": ds.domain, "count": len(ds), "dim": ds.dim, "params": ds.params, "sha256": digest.hexdigest()[:16]}


def _write_manifest(out: Path, cfg: IimtConfig, command: str, seeds: List[int], datasets: Dict[str, DomainDataset], files: List[str]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seeds": seeds,
        "datasets": {name: _dataset_manifest(ds) for name, ds in datasets.items()},
        "files": sorted(files),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def summary_rows(model, splits) -> List[tuple]:
    rows = []
    for name, ds in (("source", splits.source_test), ("target", splits.target_test)):
        r = evaluate(model, ds)
        rows.append((name, r.accuracy, r.weighted_f1))
    return rows


def summary_text(rows) -> str:
    lines = [f"{'split':<8}  {'accuracy':>9}  {'weighted F1':>11}", "-" * 32]
    lines += [f"{name:<8}  {100 * acc:>8.2f}%  {f1:>11.4f}" for name, acc, f1 in rows]
    return "\n".join(lines) + "\n"


def summary_csv(rows) -> str:
    return "split,accuracy,weighted_f1\n" + "".join(f"{n},{a!r},{f!r}\n" for n, a, f in rows)


# -- commands ------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, "runs/train")
    out.mkdir(parents=True, exist_ok=True)
    splits = build_datasets(cfg)
    ckpt_dir = out / "checkpoints"
    metrics = out / "metrics.log"
    mode = "a" if args.resume else "w"
    with metrics.open(mode) as fh:
        def write(report):
            fh.write(report.to_json() + "\n")
            if report.step % 100 == 0:
                log.debug("step %d total %.5f", report.step, report.total)

        eval_sets = {"source": splits.source_test, "target": splits.target_test}
        try:
            result = train(cfg, splits.source, splits.target, eval_sets=eval_sets, out_dir=ckpt_dir, resume_from=args.resume, log=write)
        except DivergenceError as exc:
            kept = f"; last checkpoint {exc.last_checkpoint}" if exc.last_checkpoint else ""
            print(f"error: training diverged: {exc}{kept}", file=sys.stderr)
            return EXIT_RUNTIME

    final = sorted(ckpt_dir.glob(f"ckpt-step{result.steps_done:07d}-*.ckpt"))[-1]
    shutil.copyfile(final, out / "final.ckpt")
    (out / "config.toml").write_text(dump_config(cfg))
    rows = summary_rows(result.model, splits)
    (out / "summary.txt").write_text(summary_text(rows))
    (out / "summary.csv").write_text(summary_csv(rows))
    files = ["metrics.log", "final.ckpt", "config.toml", "summary.txt", "summary.csv", f"checkpoints/{final.name}"]
    datasets = {"source": splits.source, "target": splits.target, "source_test": splits.source_test, "target_test": splits.target_test}
    _write_manifest(out, cfg, "train", [cfg.train.seed], datasets, files)
    print(summary_text(rows), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    splits = build_datasets(cfg)
    model = init_params(model_config(cfg, splits.source), cfg.train.seed)
    restore(args.checkpoint, model, make_optimizer(cfg.train.optimizer, model.parameters(), cfg.train.lr))
    if args.data:
        ds = load_dataset(args.data)
        r = evaluate(model, ds)
        rows = [(ds.domain, r.accuracy, r.weighted_f1)]
    else:
        rows = summary_rows(model, splits)
    print(summary_text(rows), end="")
    if args.out or os.environ.get(ENV_OUT_DIR):
        out = _out_dir(args, "")
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.txt").write_text(summary_text(rows))
        (out / "eval.csv").write_text(summary_csv(rows))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load(args)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    out = _out_dir(args, "runs/ablate")
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.train.seed + i for i in range(args.seeds)]

    def progress(label, seed, report):
        log.info("%-28s seed %d  target acc %.2f%%", label, seed, 100 * report.accuracy)

    try:
        rows = run_ablation(cfg, seeds, progress)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    (out / "ablation.csv").write_text(ablation_csv(rows))
    (out / "ablation.txt").write_text(ablation_text(rows))
    (out / "config.toml").write_text(dump_config(cfg))
    splits = build_datasets(cfg, seeds[0])
    _write_manifest(out, cfg, "ablate", seeds, {"source": splits.source, "target": splits.target}, ["ablation.csv", "ablation.txt", "config.toml"])
    print(ablation_text(rows), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    result = run_suite(seed=args.seed or 0, tolerance=args.tolerance)
    for name in SUITE_LOSSES:
        rep = result.reports[name]
        status = "PASS" if rep.passed else "FAIL"
        print(f"{name:<6} max rel err {rep.max_rel_error:.3e}  {status}")
    print(f"{'all' if result.passed else 'failed'}: {len(SUITE_LOSSES)} losses, tolerance {args.tolerance:g}, {result.seconds:.2f}s")
    if not result.passed:
        bad = [n for n in SUITE_LOSSES if not result.reports[n].passed]
        print(f"error: gradient check failed for {', '.join(bad)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.generator not in GENERATORS:
        raise UsageError(f"unknown generator {args.generator!r}; available: {', '.join(GENERATORS)}")
    seed = args.seed if args.seed is not None else 0
    if args.generator == "two-moons":
        ds = gen_two_moons(args.n, args.noise, args.rot, seed, args.domain)
    elif args.generator == "shifted-blobs":
        shift = [float(v) for v in args.shift.split(",")] if args.shift else [0.0, 0.0]
        ds = gen_shifted_blobs(args.n, [[-1.0, 0.0], [1.0, 0.0]], [[0.25, 0.0], [0.0, 0.25]], shift, seed, args.domain)
    else:
        src, tgt = gen_mini_digits(args.n_per_class, args.resolution, args.rot, seed)
        ds = src if args.domain == "source" else tgt
    out = _out_dir(args, f"data/{args.generator}")
    save_dataset(ds, out)
    print(f"wrote {len(ds)} {ds.domain} samples to {out}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iimt", description="Inter- and intra-domain mixup training for domain adaptation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=1, help="repeat for debug output")
    p.add_argument("-q", "--quiet", action="store_const", const=0, dest="verbose")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="TOML config file (defaults apply when omitted)")
        sp.add_argument("--out", help=f"output directory (env {ENV_OUT_DIR})")
        sp.add_argument("--seed", type=int, help="override train.seed")

    sp = sub.add_parser("train", help="train one model and write metrics, checkpoints, manifest and summary")
    common(sp)
    sp.add_argument("--wt-max", type=float, help="override loss.w_t_max")
    sp.add_argument("--steps", type=int, help="override train.total_steps")
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the config's test splits or a dataset directory")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", help="dataset directory written by gen-data")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="run the five cumulative ablation rows over several seeds")
    common(sp)
    sp.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at train.seed")
    sp.add_argument("--wt-max", type=float, help="override loss.w_t_max")
    sp.add_argument("--steps", type=int, help="override train.total_steps")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("gen-data", help=f"write a synthetic dataset ({', '.join(GENERATORS)})")
    sp.add_argument("generator")
    common(sp, config=False)
    sp.add_argument("--n", type=int, default=2000, help="sample count (two-moons, shifted-blobs)")
    sp.add_argument("--rot", type=float, default=0.0, help="rotation in degrees (two-moons, mini-digits)")
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--shift", help="comma-separated mean shift (shifted-blobs)")
    sp.add_argument("--n-per-class", type=int, default=100, help="mini-digits")
    sp.add_argument("--resolution", type=int, default=16, choices=(8, 16), help="mini-digits")
    sp.add_argument("--domain", choices=("source", "target"), default="source")
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        _setup_logging(args.verbose)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, ValidationError, IimtError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
