"""Command-line harness.

Subcommands: train (one run, or a --beta-grid sweep of runs), eval-noise
(corruption sweeps of a saved model), gradcheck (the verification suite on
fixed tiny networks), and report (Table-style aggregation of run records).

Outputs under --out: MODEL files (one per run), per-epoch CSV curves, and a
runs.jsonl file with one JSON record per run. Re-running a command with the
same flags and seed reproduces model files and CSVs byte for byte; wall-time
fields live only in the JSON records. Exit codes: 0 success, 1 check or
numeric failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .datasets import (
    DATASETS,
    AugmentSpec,
    augment_batch,
    denormalize,
    load_split_pair,
    normalize,
    subset,
)
from .errors import ConfigError, FormatError, NumericError
from .gradcheck import all_passed, format_reports, run_all_checks
from .network import Network
from .perturb import CSV_HEADER, SWEEP_KINDS, sweep
from .presets import PRESETS, build_net
from .tangents import load_or_build_tangents
from .tensor import rng_stream
from .training import ALGOS, TrainConfig, fit
from . import __version__

REGULARIZED = ("loss-ibp", "pred-ibp", "tbp", "fast-tbp")
LP_ALGOS = ("loss-ibp", "pred-ibp", "tbp")
ADVERSARIAL = ("at", "fast-at")

EPOCH_CSV_HEADER = "epoch,train_loss,aux_loss,test_error,lr"


def build_id() -> str:
    return f"ibpnet-{__version__}"


def _parse_floats(text: str) -> list:
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated float list, got {text!r}")
    if not values:
        raise ConfigError(f"empty value list {text!r}")
    return values


def _data_dir(args) -> str:
    return args.data_dir or os.environ.get("IBP_DATA_DIR", "data")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train_settings(args) -> dict:
    """Merge explicit flags over preset values over base defaults; reject
    flag combinations that have no effect."""
    preset = {}
    if args.preset is not None:
        preset = PRESETS[args.preset]

    def pick(value, key, default):
        if value is not None:
            return value
        return preset.get(key, default)

    algo = args.algo or "bp"
    if args.beta is not None and args.beta_grid is not None:
        raise ConfigError("--beta and --beta-grid are mutually exclusive")
    if (args.beta is not None or args.beta_grid is not None) and algo not in REGULARIZED:
        raise ConfigError(f"--beta has no effect with --algo {algo}")
    if args.epsilon is not None and algo not in ADVERSARIAL:
        raise ConfigError(f"--epsilon has no effect with --algo {algo}")
    if args.r is not None and algo not in LP_ALGOS:
        raise ConfigError(f"--r has no effect with --algo {algo}")
    dataset = pick(args.dataset, "dataset", "mnist")
    default_net = {"mnist": "mnist-paper", "digits": "mnist-tiny",
                   "cifar10": "cifar-paper"}[dataset]
    if args.beta_grid is not None:
        betas = _parse_floats(args.beta_grid)
    else:
        betas = [args.beta if args.beta is not None else 0.0]
    return dict(
        algo=algo,
        dataset=dataset,
        net=preset.get("net", default_net),
        subset=pick(args.subset_size, "subset", 0),
        betas=betas,
        epsilon=args.epsilon if args.epsilon is not None else 0.0,
        r=args.r if args.r is not None else 1,
        epochs=pick(args.epochs, "epochs", 1),
        alpha=pick(args.lr, "alpha", 0.1),
        momentum=pick(args.momentum, "momentum", 0.9),
        decay=pick(args.gamma, "decay", 0.98),
        batch_size=pick(args.batch_size, "batch_size", 32),
        sigma=preset.get("sigma", 0.9),
        seed=args.seed,
        augment=args.augment,
        normalize_tangents=args.normalize_tangents,
        clip=args.clip,
        preset=args.preset,
    )


def run_name(s: dict, beta: float) -> str:
    name = f"{s['dataset']}-{s['algo']}"
    if s["algo"] in REGULARIZED:
        name += f"-beta{beta:g}"
    if s["algo"] in LP_ALGOS:
        name += f"-r{s['r']}"
    if s["algo"] in ADVERSARIAL:
        name += f"-eps{s['epsilon']:g}"
    return name + f"-seed{s['seed']}"


def _write_epoch_csv(path: str, history):
    with open(path, "w") as fh:
        fh.write(EPOCH_CSV_HEADER + "\n")
        for st in history:
            fh.write(f"{st.epoch},{st.mean_loss:.12g},{st.mean_aux:.12g},"
                     f"{st.test_error:.12g},{st.lr:.12g}\n")


def train_once(s: dict, beta: float, train_ds, test_ds, tangents, out: str) -> dict:
    cfg = TrainConfig(
        algo=s["algo"], alpha=s["alpha"], beta=beta, epsilon=s["epsilon"],
        r=s["r"], momentum=s["momentum"], decay=s["decay"], epochs=s["epochs"],
        batch_size=s["batch_size"], seed=s["seed"], clip=s["clip"],
    )
    net = build_net(s["net"], s["seed"])
    batch_transform = None
    if s["augment"]:
        aug_rng = rng_stream(s["seed"], "augment")
        spec = AugmentSpec()
        mean = train_ds.mean_pixel

        def batch_transform(xb):
            raw = denormalize(xb, mean)
            return normalize(augment_batch(raw, spec, aug_rng), mean)

    name = run_name(s, beta)
    print(f"== {name} ==", flush=True)
    log = lambda st: print(
        f"epoch {st.epoch:3d}  loss {st.mean_loss:.6f}  aux {st.mean_aux:.6f}"
        f"  test_err {st.test_error:.4f}  lr {st.lr:.5f}  {st.seconds:.1f}s",
        flush=True,
    )
    history = fit(
        net, train_ds.images, train_ds.labels, cfg, tangents=tangents,
        eval_set=(test_ds.images, test_ds.labels), log=log,
        batch_transform=batch_transform,
    )
    model_path = os.path.join(out, name + ".ibpnet")
    net.save(model_path)
    _write_epoch_csv(os.path.join(out, name + ".csv"), history)
    record = dict(
        name=name,
        build_id=build_id(),
        config=dict(
            algo=s["algo"], dataset=s["dataset"], preset=s["preset"],
            net=s["net"], subset=s["subset"], beta=beta, epsilon=s["epsilon"],
            r=s["r"], alpha=s["alpha"], momentum=s["momentum"],
            decay=s["decay"], epochs=s["epochs"], batch_size=s["batch_size"],
            seed=s["seed"], augment=s["augment"],
            normalize_tangents=s["normalize_tangents"], sigma=s["sigma"],
            clip=s["clip"],
        ),
        epochs=[
            dict(epoch=st.epoch, train_loss=st.mean_loss, aux_loss=st.mean_aux,
                 test_error=st.test_error, lr=st.lr, seconds=st.seconds)
            for st in history
        ],
        final_test_error=history[-1].test_error if history else None,
        seconds_per_epoch=(
            float(np.mean([st.seconds for st in history])) if history else 0.0
        ),
        model_path=model_path,
    )
    with open(os.path.join(out, "runs.jsonl"), "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    if history:
        print(f"final test_err {history[-1].test_error:.4f}  model {model_path}")
    return record


def cmd_train(args) -> int:
    s = _train_settings(args)
    train_ds, test_ds = load_split_pair(_data_dir(args), s["dataset"])
    if s["subset"]:
        train_ds = subset(train_ds, s["subset"], s["seed"])
    tangents = None
    if s["algo"] in ("tbp", "fast-tbp"):
        tangents = load_or_build_tangents(
            train_ds.images, s["sigma"], s["normalize_tangents"]
        )
    os.makedirs(args.out, exist_ok=True)
    for beta in s["betas"]:
        train_once(s, beta, train_ds, test_ds, tangents, args.out)
    return 0


# ---------------------------------------------------------------------------
# eval-noise
# ---------------------------------------------------------------------------

def cmd_eval_noise(args) -> int:
    if not os.path.exists(args.model):
        raise ConfigError(f"model file not found: {args.model}")
    net = Network.load(args.model)
    _, test_ds = load_split_pair(_data_dir(args), args.dataset)
    result = sweep(
        net, test_ds.images, test_ds.labels, args.noise,
        _parse_floats(args.levels), args.seed,
    )
    lines = [CSV_HEADER] + list(result.rows())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# gradcheck / report
# ---------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    reports = run_all_checks(args.seed)
    print(format_reports(reports))
    return 0 if all_passed(reports) else 1


def _group_key(record: dict) -> tuple:
    c = record["config"]
    return (c["dataset"], c["algo"], c["beta"], c["epsilon"], c["r"])


def cmd_report(args) -> int:
    path = os.path.join(args.runs, "runs.jsonl")
    if not os.path.exists(path):
        raise ConfigError(f"no run records at {path}")
    with open(path) as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        raise ConfigError(f"{path} holds no runs")
    groups = {}
    for rec in records:
        groups.setdefault(_group_key(rec), []).append(rec)
    rows = []
    for key in sorted(groups, key=str):
        dataset, algo, beta, epsilon, r = key
        recs = groups[key]
        errs = np.array([rec["final_test_error"] for rec in recs]) * 100.0
        secs = np.mean([rec["seconds_per_epoch"] for rec in recs])
        rows.append(dict(
            dataset=dataset, algo=algo, beta=beta, epsilon=epsilon, r=r,
            runs=len(recs), err_mean=float(errs.mean()),
            err_std=float(errs.std()), sec_per_epoch=float(secs),
        ))
    # flag the best hyperparameters per dataset/algorithm pair
    best = {}
    for i, row in enumerate(rows):
        key = (row["dataset"], row["algo"])
        if key not in best or row["err_mean"] < rows[best[key]]["err_mean"]:
            best[key] = i
    header = (f"{'dataset':<9} {'algo':<9} {'beta':>6} {'eps':>5} {'r':>2} "
              f"{'runs':>4} {'err% mean+/-std':>17} {'s/epoch':>8}")
    print(header)
    print("-" * len(header))
    for i, row in enumerate(rows):
        mark = " *" if best[(row["dataset"], row["algo"])] == i else ""
        print(f"{row['dataset']:<9} {row['algo']:<9} {row['beta']:>6g} "
              f"{row['epsilon']:>5g} {row['r']:>2d} {row['runs']:>4d} "
              f"{row['err_mean']:>8.2f} +/- {row['err_std']:<5.2f} "
              f"{row['sec_per_epoch']:>8.2f}{mark}")
    if args.csv:
        cols = ("dataset", "algo", "beta", "epsilon", "r", "runs",
                "err_mean", "err_std", "sec_per_epoch")
        with open(args.csv, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in rows:
                fh.write(",".join(f"{row[c]:g}" if isinstance(row[c], float)
                                  else str(row[c]) for c in cols) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ibpnet",
        description="Invariant-backpropagation training and verification harness.",
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="train one model (or a --beta-grid sweep)")
    t.add_argument("--algo", choices=ALGOS, default=None)
    t.add_argument("--dataset", choices=DATASETS, default=None)
    t.add_argument("--subset-size", type=int, default=None,
                   help="stratified training subset size (0 = full split)")
    t.add_argument("--beta", type=float, default=None,
                   help="auxiliary gradient weight (regularized algorithms)")
    t.add_argument("--beta-grid", default=None,
                   help="comma-separated betas; one run per value")
    t.add_argument("--epsilon", type=float, default=None,
                   help="adversarial step size (at / fast-at)")
    t.add_argument("--r", type=int, choices=(1, 2), default=None,
                   help="penalty norm order for lp-penalized algorithms")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--lr", type=float, default=None, help="learning rate alpha")
    t.add_argument("--momentum", type=float, default=None)
    t.add_argument("--gamma", type=float, default=None,
                   help="per-epoch learning-rate decay factor")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--augment", action="store_true",
                   help="random shift/scale/rotation per training batch")
    t.add_argument("--preset", choices=sorted(PRESETS), default=None)
    t.add_argument("--out", default="runs", help="output directory")
    t.add_argument("--data-dir", default=None,
                   help="dataset directory (default $IBP_DATA_DIR or ./data)")
    t.add_argument("--clip", action="store_true",
                   help="clip adversarial points to [0, 1]")
    t.add_argument("--normalize-tangents", action="store_true",
                   help="scale each tangent image to unit L2 norm")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval-noise", help="corruption sweep of a saved model")
    e.add_argument("--model", required=True, help="path to a saved model file")
    e.add_argument("--noise", choices=SWEEP_KINDS, required=True)
    e.add_argument("--levels", required=True,
                   help="comma-separated levels; must start at 0 and increase")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--dataset", choices=DATASETS, default="mnist")
    e.add_argument("--data-dir", default=None)
    e.add_argument("--out", default=None, help="CSV path (default stdout)")
    e.set_defaults(fn=cmd_eval_noise)

    g = sub.add_parser("gradcheck", help="run the gradient verification suite")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gradcheck)

    r = sub.add_parser("report", help="aggregate run records into a table")
    r.add_argument("--runs", default="runs", help="run directory")
    r.add_argument("--csv", default=None, help="also write the table as CSV")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
