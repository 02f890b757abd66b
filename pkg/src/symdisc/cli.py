"""Command-line entry point: ``symdisc {synth,discover,table,semisynth}``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or configuration error.
Any flag can also come from ``--config file.json`` (keys are the flag names with
dashes replaced by underscores); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, evaluate, groups, spectral
from .errors import InvalidArgumentError, SymdiscError
from .experiments import (
    SELECTION_CHOICES,
    STAT_CHOICES,
    discover,
    make_kernel,
    run_synthetic,
    seed_sweep,
    semisynth,
    transformed_rows,
)
from .finetune import FinetuneConfig, finetune
from .ranking import rank_data
from .rng import make_rng

class UsageError(Exception):
    pass


def parse_seeds(spec: str) -> list[int]:
    """``"7"``, ``"0:100"`` (half-open range) or ``"1,4,9"``."""
    try:
        if ":" in spec:
            lo, hi = spec.split(":")
            return list(range(int(lo), int(hi)))
        return [int(s) for s in spec.split(",")]
    except ValueError:
        raise UsageError(f"bad seed list {spec!r}") from None


def _kernel_args(p):
    p.add_argument("--h", type=float, default=3.0, help="kernel bandwidth")
    p.add_argument("--alpha", type=float, default=None, help="weighted-kernel regularisation; omit for spherical")
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--bootstrap-m", type=int, default=200)
    p.add_argument("--alpha-sig", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symdisc", description="Discover involutive linear symmetries from samples.")
    parser.add_argument("--config", help="JSON file with default values for the chosen command")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted Gumbel-mixture dataset")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--clusters", type=int, default=2)
    p.add_argument("--swaps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact-pairs", action="store_true", help="image half is the base half mapped exactly")
    p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("discover", help="estimate a symmetry from a CSV or IDX dataset")
    p.add_argument("--input", required=True, help="CSV with header x0..x{d-1}[,label] or an IDX image file")
    p.add_argument("--labels", help="IDX label file when --input is IDX")
    p.add_argument("--stat", choices=STAT_CHOICES, default="mm-mix")
    p.add_argument("--selection", choices=SELECTION_CHOICES, default="clt")
    p.add_argument("--k", type=int, default=None, help="swap count for known-k selection")
    p.add_argument("--truth", help="CSV of the true matrix; reports the ground-truth error")
    p.add_argument("--finetune", action="store_true")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.1, help="orthogonality penalty weight")
    p.add_argument("--group", action="store_true", help="also recover the group and its generators")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    _kernel_args(p)

    p = sub.add_parser("table", help="seed sweep over planted datasets, one record per (seed, statistic)")
    p.add_argument("--d", type=int, nargs="+", default=[10])
    p.add_argument("--n", type=int, nargs="+", default=[10000])
    p.add_argument("--clusters", type=int, default=2)
    p.add_argument("--swaps", type=int, default=None, help="planted swaps (default d // 2)")
    p.add_argument("--seeds", default="0:100")
    p.add_argument("--stat", nargs="+", choices=STAT_CHOICES, default=["mm-mix", "cov-adj"])
    p.add_argument("--selection", choices=SELECTION_CHOICES, default="known-k")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="table.csv")
    p.add_argument("--summary", default=None, help="summary CSV (default: <out>_summary.csv)")
    p.add_argument("--histogram", default=None, help="error histogram CSV of the first statistic")
    _kernel_args(p)

    p = sub.add_parser("semisynth", help="flip protocol on IDX images")
    p.add_argument("--images", required=True)
    p.add_argument("--labels")
    p.add_argument("--sides", type=int, nargs="+", default=[4, 10])
    p.add_argument("--stat", nargs="+", choices=STAT_CHOICES, default=["sign"])
    p.add_argument("--limit", type=int, default=None, help="use only the first N images")
    p.add_argument("--grid-k", type=int, nargs="*", default=[0, 5, 10, 20], help="swap counts for image grids")
    p.add_argument("--grid-images", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config must be a JSON object")
        cfg.pop("command", None)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _save_config(args, path: Path) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    cfg = data.SynthConfig(args.d, args.n, args.clusters, args.seed, args.swaps, args.exact_pairs)
    dm, planted = data.gumbel_mixture(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.write_csv(out / f"synth_seed{args.seed}.csv", dm)
    data.write_matrix(out / f"planted_seed{args.seed}.csv", planted.matrix)
    print(out / f"synth_seed{args.seed}.csv")
    print(out / f"planted_seed{args.seed}.csv")
    return 0


def _load(path, labels=None) -> data.DesignMatrix:
    if str(path).endswith(".csv"):
        return data.read_csv(path)
    return data.idx_read(path, labels)


def cmd_discover(args) -> int:
    dm = _load(args.input, args.labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_config(args, out / "run_config.json")
    model = spectral.fit_spectral(dm.values)
    kernel = make_kernel(args.h, args.alpha, model.covariance)
    x = dm if args.stat == "label-dissim" else dm.values
    disc = discover(
        x, args.stat, args.selection, k=args.k, kernel=kernel, rng=make_rng(args.seed), model=model,
        batch=min(args.batch, dm.rows), repeats=args.repeats, folds=args.folds,
        bootstrap_m=args.bootstrap_m, alpha_sig=args.alpha_sig,
    )
    disc.report.to_csv(out / "ranking.csv", model.eigenvalues)
    disc.selection.to_csv(out / "selection.csv")
    if "bootstrap" in disc.selection.details:
        disc.selection.details["bootstrap"].to_csv(out / "bootstrap.csv")
    matrix = disc.candidate.matrix
    w = None
    if args.finetune:
        cfg = FinetuneConfig(args.epochs, args.lr, args.momentum, min(args.batch, dm.rows), args.beta, args.h)
        trace = finetune(dm.values, disc.candidate.signs, model.eigenvectors, cfg, make_rng(args.seed, 1))
        trace.to_csv(out / "finetune.csv")
        w = trace.w
        matrix = (w * disc.candidate.signs) @ w.T
    data.write_matrix(out / "symmetry.csv", matrix)
    spectral.save_model(out / "model.npz", model, w)
    if args.group:
        gm = groups.recover_group(dm.values, model)
        if not gm.truncated and gm.order_log2:
            groups.generators(dm.values, model, gm)
        gm.save(out / "group.csv", out / "group.json")
        print(f"group order 2^{gm.order_log2}{' (truncated)' if gm.truncated else ''}")
    print(f"selected k={disc.selection.swap_count} negated={disc.candidate.negated.tolist()}")
    if args.truth:
        truth = data.read_matrix(args.truth)
        err = evaluate.ground_truth_error(matrix, truth, per_entry=True)
        print(f"ground-truth error {err:.6f}")
    return 0


def cmd_table(args) -> int:
    seeds = parse_seeds(args.seeds)
    records = []
    for d in args.d:
        for n in args.n:
            swaps = d // 2 if args.swaps is None else args.swaps

            def one(seed, d=d, n=n, swaps=swaps):
                return run_synthetic(seed, d, n, args.clusters, swaps, tuple(args.stat), args.selection,
                                     bandwidth=args.h, alpha=args.alpha,
                                     batch=args.batch, repeats=args.repeats, folds=args.folds)

            for recs in seed_sweep(one, seeds, args.workers):
                records.extend(recs)
    evaluate.write_records(args.out, records)
    summary = evaluate.summarize(records)
    summary_path = args.summary or str(Path(args.out).with_suffix("")) + "_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)
    for row in summary:
        print(f"{row['method']:<24} d={row['d']:<4} N={row['N']:<7} "
              f"{row['mean_error']:.4f} ± {row['std_error']:.4f} ({row['runs']} runs)")
    if args.histogram:
        first = f"{args.stat[0]}/{args.selection}"
        hist = evaluate.error_histogram([r.error for r in records if r.method == first])
        hist.to_csv(args.histogram)
        print(f"near-global fraction {hist.near_global_fraction:.3f} (bimodal={hist.bimodal}, cut={hist.cut:.3f})")
    return 0


def cmd_semisynth(args) -> int:
    images = data.idx_read(args.images, args.labels)
    if args.limit:
        images = images.subset(slice(0, args.limit))
    side = int(round(np.sqrt(images.dim)))
    if side * side != images.dim:
        raise InvalidArgumentError("images must be square")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_config(args, out / "run_config.json")
    rows = []
    for to_side in args.sides:
        res = semisynth(images, to_side, tuple(args.stat), args.seed, from_side=side)
        row = {"side": to_side, "covariance_accuracy": res["covariance_accuracy"], **res["buckets"]}
        row.update({f"acc_{k}": v for k, v in res["selection_accuracy"].items()})
        rows.append(row)
        model = res["model"]
        stat = next((s for s in args.stat if s != "label-dissim"), "sign")
        order = rank_data(res["data"].values, model, stat).order
        ks = [k for k in args.grid_k if k <= model.dim]
        sample = res["data"].values[: args.grid_images]
        strips = transformed_rows(sample, model, order, ks)
        evaluate.write_pgm(out / f"grid_side{to_side}.pgm", evaluate.image_grid(strips, to_side))
        for k, strip in zip(ks, strips):
            evaluate.write_pgm(out / f"grid_side{to_side}_k{k}.pgm", evaluate.image_grid([strip], to_side))
        print(f"side {to_side}: covariance accuracy {res['covariance_accuracy']:.3f} "
              + " ".join(f"{k}={v:.3f}" for k, v in res["selection_accuracy"].items()))
    keys = sorted({k for r in rows for k in r}, key=lambda k: (k != "side", k))
    with open(out / "semisynth.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    return 0


COMMANDS = {"synth": cmd_synth, "discover": cmd_discover, "table": cmd_table, "semisynth": cmd_semisynth}


def main(argv=None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    logging.captureWarnings(True)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InvalidArgumentError) as exc:
        print(f"symdisc: error: {exc}", file=sys.stderr)
        return 2
    except (SymdiscError, ArithmeticError, np.linalg.LinAlgError, OSError, ValueError) as exc:
        print(f"symdisc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
