"""Command-line interface: train, predict, eval, diagnose, simulate."""
import argparse
import json
import os
import sys
from contextlib import nullcontext

import numpy as np
from threadpoolctl import threadpool_limits

from dgpemu.errors import DgpError, DimMismatch

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments, configuration or missing inputs (exit code 2)."""


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _write_scaling_into(model, scaling):
    if scaling is not None:
        model.input_scaling = {"lo": scaling.lo, "hi": scaling.hi}
    return model


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args):
    from dgpemu import config as cfgmod
    from dgpemu.data import load_csv, scale_unit_cube
    from dgpemu.model import save_model
    from dgpemu.trainer import train

    _require_file(args.config, "config file")
    try:
        cfg = cfgmod.load_config(args.config)
    except (DgpError, KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid config {args.config}: {exc}") from exc
    data_path = cfg["data"]["train"]
    _require_file(data_path, "training data")
    ds = load_csv(data_path, cfg["data"]["target"], cfg["data"]["na_as_zero"])
    if cfg["data"]["scale"]:
        ds = scale_unit_cube(ds)
    tc = cfgmod.train_config(cfg)
    os.makedirs(args.out, exist_ok=True)
    cfgmod.dump_config(cfg, os.path.join(args.out, "config.toml"))
    try:
        model, trace = train(ds.X, ds.y, tc)
    except DgpError as exc:
        trace = getattr(exc, "trace", None)
        if trace is not None:
            trace.to_csv(os.path.join(args.out, "trace.csv"))
        raise
    _write_scaling_into(model, ds.scaling)
    save_model(model, os.path.join(args.out, "model.json"))
    trace.to_csv(os.path.join(args.out, "trace.csv"))
    last = trace.records[-1].elbo if len(trace) else float("nan")
    print(f"trained {tc.n_iters} iterations; final minibatch elbo={last:.6g}")
    print(f"wrote {os.path.join(args.out, 'model.json')}")
    return EXIT_OK


def _read_inputs(path, dim):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    X = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if X.shape[1] == dim + 1 and X.shape[1] == len(header):
        # a dataset file: drop the trailing response column
        X, header = X[:, :dim], header[:dim]
    if X.shape[1] != dim:
        raise DimMismatch(f"model has {dim} inputs but {path} has {X.shape[1]} columns")
    return X, header


def cmd_predict(args):
    from dgpemu.model import load_model
    from dgpemu.predict import predict_samples, summarize, write_predictions

    _require_file(args.model, "model file")
    _require_file(args.inputs, "inputs file")
    if args.samples < 2:
        raise UsageError("--samples must be at least 2 to form summaries")
    model = load_model(args.model)
    X, header = _read_inputs(args.inputs, model.input_dim)
    U = X
    if model.input_scaling is not None:
        lo, hi = model.input_scaling["lo"], model.input_scaling["hi"]
        U = (X - lo) / (hi - lo)
    samples = predict_samples(U, model, args.samples, args.seed, args.include_noise)
    summary = summarize(samples)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.model)), "predictions.csv")
    write_predictions(out, X, summary, header)
    print(f"wrote {X.shape[0]} predictions to {out}")
    return EXIT_OK


def _truth_column(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    name = "y" if "y" in header else header[-1]
    return data[:, header.index(name)]


def cmd_eval(args):
    from dgpemu import metrics
    from dgpemu.predict import read_predictions

    _require_file(args.pred, "predictions file")
    _require_file(args.truth, "truth file")
    _, s = read_predictions(args.pred)
    truth = _truth_column(args.truth)
    scores = metrics.report(s.mean, s.lower, s.upper, truth)
    text = metrics.format_report(scores)
    sys.stdout.write(text)
    base = os.path.splitext(args.out or args.pred)[0]
    with open(base + "_metrics.txt", "w") as fh:
        fh.write(text)
    metrics.write_metrics_csv(base + "_metrics.csv", scores)
    return EXIT_OK


def cmd_diagnose(args):
    from dgpemu.data import load_csv, scale_unit_cube
    from dgpemu.diagnose import diagnose, diagnose_config

    _require_file(args.data, "data file")
    ds = load_csv(args.data, args.target)
    if np.all(np.ptp(ds.X, axis=0) > 0):
        ds = scale_unit_cube(ds)
    report = diagnose(ds.X, ds.y, args.threshold, diagnose_config(seed=args.seed), args.restarts)
    for line in report.lines():
        print(line)
    if report.warning:
        print(f"warning: {report.warning}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    from dgpemu import synthetic
    from dgpemu.data import Dataset, save_csv

    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.kind == "step1d":
        X = (np.linspace(0, 1, args.n) if args.design == "grid" else rng.random(args.n))[:, None]
        ds = Dataset(X, synthetic.step1d(X[:, 0]), ("x1",))
        path = os.path.join(args.out, "step1d.csv")
        save_csv(path, ds)
    elif args.kind == "piecewise2d":
        X = synthetic.grid_design(args.grid, 2) if args.design == "grid" else rng.random((args.n, 2))
        ds = Dataset(X, synthetic.piecewise2d(X), ("x1", "x2"))
        path = os.path.join(args.out, "piecewise2d.csv")
        save_csv(path, ds)
    else:
        rows = synthetic.smoothness_table(args.alphas, args.lambdas, args.reps, args.seed,
                                          n_points=args.points)
        path = os.path.join(args.out, "smoothness.csv")
        with open(path, "w") as fh:
            fh.write("alpha,lambda,mean_score\n")
            for a, lam, s in rows:
                fh.write(f"{a:.17g},{lam:.17g},{s:.17g}\n")
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="dgpemu", description="Deep GP emulator")
    p.add_argument("--threads", type=int, default=0, help="cap on BLAS/OpenMP worker threads (0 = library default)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a model from a TOML config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="posterior-predictive summaries")
    pr.add_argument("--model", required=True)
    pr.add_argument("--inputs", required=True)
    pr.add_argument("--samples", type=int, default=5000)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--include-noise", action="store_true")
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score predictions against the truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", help="check whether a stationary GP suffices")
    d.add_argument("--data", required=True)
    d.add_argument("--target", default="y")
    d.add_argument("--threshold", type=float, default=0.3,
                   help="cutoff on the sd of the output log length scale")
    d.add_argument("--restarts", type=int, default=3, help="independently seeded fits")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("simulate", help="generate test datasets or the smoothness table")
    s.add_argument("--kind", required=True, choices=["step1d", "piecewise2d", "dgp-prior"])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--design", choices=["grid", "uniform"], default="grid")
    s.add_argument("--n", type=int, default=50, help="points for uniform designs and step1d")
    s.add_argument("--grid", type=int, default=25, help="points per dimension for piecewise2d")
    s.add_argument("--alphas", type=float, nargs="+", default=[0.1, 1.0, 2.0, 3.0])
    s.add_argument("--lambdas", type=float, nargs="+", default=[0.1, 0.5, 1.0, 2.0])
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--points", type=int, default=200)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    limits = threadpool_limits(args.threads) if args.threads > 0 else nullcontext()
    try:
        with limits:
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DgpError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
