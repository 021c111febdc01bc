"""Command-line experiment runner.

Exit codes: 0 success, 1 training diverged, 2 bad input (config, missing or
malformed files), 3 metric unavailable (classifier below its accuracy floor).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as data_mod
from .config import ExperimentConfig, load_config, substream
from .data import DataFormatError, Dataset, TOY_PRESETS, read_dataset_csv
from .gan import (TrainHistory, GanModel, VARIANTS, load_model, load_training_data, save_model,
                  toy_spec_of, train)
from .metrics import (ClassifierConfig, ClassProbMatrix, MetricUnavailable, inception_score,
                      load_classifier, mode_coverage, modified_inception_score, nearest_neighbors,
                      save_classifier, train_classifier)
from .nets import ConfigError
from .plot import scatter_svg

log = logging.getLogger("deligan")

EXIT_OK, EXIT_DIVERGED, EXIT_INPUT, EXIT_METRIC = 0, 1, 2, 3

CHECKPOINT = "checkpoint.json"
HISTORY = "history.csv"
MU_SNAPSHOTS = "mu_snapshots.csv"


class InputError(Exception):
    """Bad command input; maps to exit code 2."""


def run_experiment(cfg: ExperimentConfig, out_dir) -> tuple[GanModel, TrainHistory]:
    """Train per ``cfg`` and write checkpoint, history and mu snapshots into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    every = cfg.train.checkpoint_every

    def checkpoint(it, model, hist):
        if every > 0 and it % every == 0:
            save_model(model, out / CHECKPOINT)

    model, hist = train(cfg, callback=checkpoint)
    save_model(model, out / CHECKPOINT)
    (out / HISTORY).write_text(hist.to_csv())
    (out / MU_SNAPSHOTS).write_text(hist.mu_snapshots_csv())
    return model, hist


def write_matrix_csv(path, rows: np.ndarray, prefix: str = "x") -> None:
    rows = np.asarray(rows, dtype=np.float64)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"{prefix}{j}" for j in range(rows.shape[1])])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _read_samples(path) -> Dataset:
    try:
        return read_dataset_csv(path)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None
    except DataFormatError as e:
        raise InputError(str(e)) from None


def _config(path, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    cfg = load_config(path)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    if out is not None:
        cfg = cfg.replace(out=out)
    return cfg


def _load_checkpoint(path) -> GanModel:
    if path is None or not Path(path).exists():
        raise InputError(f"checkpoint not found: {path}")
    try:
        return load_model(path)
    except (ValueError, KeyError) as e:
        raise InputError(f"{path}: unreadable checkpoint ({e})") from None


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _config(args.config, args.seed, args.out)
    if cfg.out is None:
        raise InputError("no output directory: pass --out or set 'out' in the config")
    _, hist = run_experiment(cfg, cfg.out)
    if hist.status != "ok":
        print(f"status={hist.status}: {hist.message}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {cfg.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    model = _load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    write_matrix_csv(args.out, model.generate(args.n, rng))
    return EXIT_OK


def cmd_classifier(args) -> int:
    if args.data is not None:
        d = _read_samples(args.data)
    else:
        cfg = _config(args.config)
        d = load_training_data(cfg)
    if d.labels is None:
        raise InputError("classifier training data has no label column")
    default_floor = 0.8 if "mnist" in d.source else 0.9
    ccfg = ClassifierConfig(steps=args.steps, floor=args.floor if args.floor is not None else default_floor)
    clf = train_classifier(d, np.random.default_rng(args.seed), ccfg)
    save_classifier(clf, args.out)
    print(f"held-out accuracy {clf.accuracy:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    samples = _read_samples(args.samples)
    if args.probs:
        try:
            p = ClassProbMatrix.from_probs(samples.samples)
        except ValueError as e:
            raise InputError(f"{args.samples}: {e}") from None
    else:
        if args.checkpoint is None or not Path(args.checkpoint).exists():
            raise InputError(f"classifier checkpoint not found: {args.checkpoint}")
        clf = load_classifier(args.checkpoint)
        p = clf.probs(samples.samples)
    if args.score == "is":
        report = inception_score(p, args.splits)
    else:
        pairs = None if args.pairs == 0 else args.pairs
        report = modified_inception_score(p, args.splits, pairs, substream(args.seed, "pairing"))
    Path(args.out).write_text(report.to_csv())
    return EXIT_OK


def _truth_spec(arg: Optional[str]):
    if arg is None:
        return None
    if arg in TOY_PRESETS:
        return TOY_PRESETS[arg]()
    spec = toy_spec_of(load_config(arg))
    if spec is None:
        raise InputError(f"{arg}: config does not describe toy data")
    return spec


def cmd_plot(args) -> int:
    samples = _read_samples(args.samples)
    if len(samples) and samples.dim != 2:
        raise InputError(f"plot needs 2-D samples, got {samples.dim} columns")
    markers = None
    if args.checkpoint is not None:
        markers = _load_checkpoint(args.checkpoint).mu_images()
    svg = scatter_svg(samples.samples.reshape(-1, 2) if len(samples) else np.empty((0, 2)),
                      _truth_spec(args.truth), markers, args.radius)
    Path(args.out).write_text(svg)
    return EXIT_OK


def cmd_nn_grid(args) -> int:
    samples = _read_samples(args.samples)
    train_path = Path(args.train)
    if train_path.suffix in (".yaml", ".yml"):
        train_data = load_training_data(load_config(train_path))
    else:
        train_data = _read_samples(train_path)
    idx, dist = nearest_neighbors(samples.samples, train_data.samples, args.k)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample"] + [f"nn_{j + 1}" for j in range(args.k)] + [f"dist_{j + 1}" for j in range(args.k)])
        for i in range(len(idx)):
            w.writerow([i] + [int(v) for v in idx[i]] + [repr(float(v)) for v in dist[i]])
    return EXIT_OK


def _sweep_one(cfg: ExperimentConfig, run_dir: Path, n_eval: int) -> dict:
    model, hist = run_experiment(cfg, run_dir)
    row = {"variant": cfg.variant, "seed": cfg.seed, "status": hist.status,
           "iterations": len(hist.records)}
    spec = toy_spec_of(cfg)
    if spec is not None:
        samples = model.generate(n_eval, substream(cfg.seed, "eval"))
        cov = mode_coverage(samples, spec, cfg.eval.radius_sigmas)
        row.update(covered_modes=cov.covered_modes, void_fraction=repr(cov.void_fraction),
                   coverage=repr(cov.coverage))
    return row


def sweep(cfg: ExperimentConfig, variants, seeds, out_dir, threads: Optional[int] = None,
          n_eval: int = 5000) -> list[dict]:
    """Train every (variant, seed) pair in its own run directory; returns summary rows."""
    out = Path(out_dir)
    jobs = [(cfg.replace(variant=v, seed=s), out / f"{v}_s{s}") for v in variants for s in seeds]
    if threads is None:
        threads = int(os.environ.get("DELIGAN_THREADS", os.cpu_count() or 1))
    threads = max(1, min(threads, len(jobs)))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(lambda job: _sweep_one(job[0], job[1], n_eval), jobs))
    out.mkdir(parents=True, exist_ok=True)
    fields = list(rows[0].keys()) if rows else ["variant", "seed", "status"]
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def cmd_sweep(args) -> int:
    cfg = _config(args.config, out=args.out)
    if cfg.out is None:
        raise InputError("no output directory: pass --out or set 'out' in the config")
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    rows = sweep(cfg, variants, seeds, cfg.out)
    print(f"wrote {len(rows)} runs under {cfg.out}")
    return EXIT_DIVERGED if any(r["status"] != "ok" for r in rows) else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deligan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one model from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("classifier", help="train the stand-in classifier used by eval")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="experiment config whose training data (with labels) is used")
    src.add_argument("--data", help="labeled dataset CSV")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--floor", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_classifier)

    s = sub.add_parser("eval", help="inception-style scores for a sample file")
    s.add_argument("--samples", required=True)
    s.add_argument("--checkpoint", help="classifier checkpoint")
    s.add_argument("--probs", action="store_true", help="samples file already holds p(y|x) rows")
    s.add_argument("--score", choices=("mis", "is"), default="mis")
    s.add_argument("--splits", type=int, default=10)
    s.add_argument("--pairs", type=int, default=32, help="partners per sample; 0 = all pairs")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("plot", help="scatter plot of 2-D samples as SVG")
    s.add_argument("--samples", required=True)
    s.add_argument("--truth", help="toy preset name or config file")
    s.add_argument("--checkpoint", help="mixture checkpoint; marks G(mu) for each component")
    s.add_argument("--radius", type=float, default=3.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("nn-grid", help="nearest training neighbors of each sample")
    s.add_argument("--samples", required=True)
    s.add_argument("--train", required=True, help="dataset CSV or experiment config")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_nn_grid)

    s = sub.add_parser("sweep", help="train several variants and seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--variants", help="comma-separated; default all six")
    s.add_argument("--seeds", help="comma-separated; default the config seed")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError, DataFormatError, data_mod.DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except MetricUnavailable as e:
        print(f"metric unavailable: {e}", file=sys.stderr)
        return EXIT_METRIC


if __name__ == "__main__":
    sys.exit(main())
