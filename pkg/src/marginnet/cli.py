"""Command line entry point: ``marginnet <command> [--config FILE] [--out DIR] [--seed N] [--data DIR]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

from . import bounds, harness
from .data import DataFormatError
from .loss import LossKind
from .margin import MarginCurve, margin_curve, zero_one_error
from .network import Network, weight_bound_report
from .optim import TrainingDivergedError, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("marginnet")


def _experiment(args, require_network=True):
    doc = harness.load_config(args.config) if args.config else {}
    exp = harness.resolve(doc, data_dir=args.data, seed=args.seed)
    if require_network and exp.spec is None:
        raise harness.ConfigError("config needs a 'network' section")
    return exp


def _out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _print(doc):
    print(json.dumps(doc, indent=1, sort_keys=True, allow_nan=True))


def cmd_train(args):
    exp = _experiment(args)
    out = _out(args)
    config = exp.train if args.seed is None else harness._with(exp.train, seed=args.seed)
    net, history = train(exp.spec, exp.train_set, config, test=exp.test_set, evaluate_epochs=True)
    echo = f"# config {exp.echo()}\n"
    _write(os.path.join(out, "history.csv"), echo + history.iterations_csv())
    _write(os.path.join(out, "epochs.csv"), echo + history.epochs_csv())
    margin_curve(net, exp.train_set, exp.gammas, exp.margin_space).to_csv(
        os.path.join(out, "margin_curve.csv"), header_comment=f"config {exp.echo()}")
    net.save(os.path.join(out, "model.npz"))
    report = {"train_err": zero_one_error(net, exp.train_set),
              "test_err": zero_one_error(net, exp.test_set) if exp.test_set is not None else None,
              **weight_bound_report(net)}
    _write(os.path.join(out, "summary.json"), json.dumps(report, indent=1, sort_keys=True))
    _print(report)


def cmd_margin_curve(args):
    exp = _experiment(args, require_network=args.model is None)
    out = _out(args)
    if args.model:
        net = Network.load(args.model)
    else:
        net, _ = train(exp.spec, exp.train_set, exp.train)
    curve = margin_curve(net, exp.train_set, exp.gammas, exp.margin_space)
    curve.to_csv(os.path.join(out, "margin_curve.csv"), header_comment=f"config {exp.echo()}")
    _print({"gammas": list(curve.gammas), "errors": list(curve.errors), "space": curve.space,
            "zero_one_error": zero_one_error(net, exp.train_set)})


def _sweep(args, runner):
    exp = _experiment(args, require_network=runner is not harness.run_depth_sweep)
    result = runner(exp)
    harness.write_sweep(result, _out(args))
    _print({"summary": result.summary})


def cmd_sweep_depth(args):
    _sweep(args, harness.run_depth_sweep)


def cmd_sweep_lambda(args):
    _sweep(args, harness.run_lambda_sweep)


def cmd_compare_losses(args):
    _sweep(args, harness.compare_losses)


def cmd_gradcheck(args):
    out = _out(args)
    rows = []
    if args.config:
        exp = _experiment(args)
        loss = LossKind.parse(args.loss) if args.loss else exp.train.loss
        for s in exp.seeds:
            rows.append(("config", str(loss), s, harness.gradient_check(exp.spec, loss, s, args.step)))
    else:
        rows = harness.gradcheck_suite(seed=args.seed or 0, step=args.step)
    table = [{"spec": name, "loss": loss, "seed": s, "max_rel_err": r.max_rel_error,
              "worst": "" if r.worst is None else f"{r.worst[0]}/{r.worst[1]}/{'x'.join(map(str, r.worst[2]))}",
              "checked": r.checked, "skipped": r.skipped} for name, loss, s, r in rows]
    columns = ["spec", "loss", "seed", "max_rel_err", "worst", "checked", "skipped"]
    _write(os.path.join(out, "gradcheck.csv"), harness.csv_text(table, columns))
    worst = max(r.max_rel_error for *_, r in rows)
    _print({"max_rel_err": worst, "combinations": len(rows)})
    if worst >= args.tolerance:
        log.error("gradient check failed: %.3g >= %.3g", worst, args.tolerance)
        return 1
    return EXIT_OK


def cmd_bounds(args):
    report = {}
    try:
        ra = bounds.RaBoundParams(M=args.M, d=args.d, m=args.m, A=args.A, L=args.L, p=args.p,
                                  L_phi=args.L_phi, c=args.c)
        report["ra_bound"] = bounds.ra_upper_bound(ra)
        report["log_ra_bound"] = bounds.log_ra_upper_bound(ra)
    except OverflowError:
        report["ra_bound"] = math.inf
        report["log_ra_bound"] = bounds.log_ra_upper_bound(ra)
    try:
        pf = bounds.pfaffian_for_activation(args.activation)
        report["betti_log_bound"] = bounds.betti_log_bound(
            bounds.BettiBoundParams(K=args.K, d=args.d, h=args.h, L=args.L, pf=pf))
    except (bounds.HypothesisError, bounds.UnsupportedActivation) as exc:
        report["betti_log_bound"] = None
        report["betti_error"] = str(exc)
    if args.curve:
        curve = MarginCurve.from_csv(args.curve)
    else:
        curve = MarginCurve((args.gamma,), (args.err,))
    R = args.R if args.R is not None else report["ra_bound"]
    value, gamma = bounds.margin_bound(bounds.MarginBoundParams(args.delta, args.m, args.K, R, curve))
    report["margin_bound"] = value
    report["argmin_gamma"] = gamma
    if args.out:
        _write(os.path.join(_out(args), "bounds.json"), json.dumps(report, indent=1, sort_keys=True))
    _print(report)


def cmd_plots(args):
    for path in harness.emit_plots(args.out):
        print(path)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON document")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the seed list (seed, seed+1, ...)")
    common.add_argument("--data", default=os.environ.get("MNIST_DIR"), help="directory holding the MNIST IDX files")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="marginnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one model").set_defaults(func=cmd_train)
    p = sub.add_parser("margin-curve", parents=[common], help="empirical margin error curve of a model")
    p.add_argument("--model", help="saved model.npz (otherwise trains per config)")
    p.set_defaults(func=cmd_margin_curve)
    sub.add_parser("sweep-depth", parents=[common], help="depth sweep at fixed hidden-unit budget"
                   ).set_defaults(func=cmd_sweep_depth)
    sub.add_parser("sweep-lambda", parents=[common], help="penalty coefficient sweep").set_defaults(
        func=cmd_sweep_lambda)
    sub.add_parser("compare-losses", parents=[common], help="C vs C1 vs C2").set_defaults(func=cmd_compare_losses)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--loss", help="loss override, e.g. c2:0.5")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)
    p = sub.add_parser("bounds", parents=[common], help="evaluate the capacity and margin bounds")
    for name, typ, default in [("--c", float, 1.0), ("--M", float, 1.0), ("--d", int, 784), ("--m", int, 60000),
                               ("--p", int, 1), ("--L-phi", float, 1.0), ("--A", float, 1.0), ("--L", int, 2),
                               ("--K", int, 10), ("--h", int, 3000), ("--delta", float, 0.05),
                               ("--gamma", float, 0.5), ("--err", float, 0.0), ("--R", float, None)]:
        p.add_argument(name, type=typ, default=default)
    p.add_argument("--activation", default="tanh", help="Pfaffian activation: tanh or arctan")
    p.add_argument("--curve", help="margin curve CSV (gamma,err) to minimize over")
    p.set_defaults(func=cmd_bounds, out=None)
    sub.add_parser("plots", parents=[common], help="write gnuplot scripts for the CSVs in --out").set_defaults(
        func=cmd_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args) or EXIT_OK
    except TrainingDivergedError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except (DataFormatError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (harness.ConfigError, ValueError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
