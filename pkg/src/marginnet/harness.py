"""Experiment orchestration: depth sweeps, lambda sweeps, loss comparisons, gradient checks.

An experiment is described by one JSON document::

    {
      "data":    {"kind": "blobs", "m": 2000, "d": 10, "K": 3, "spread": 1.0, "seed": 0,
                  "test_fraction": 0.25, "val_fraction": 0.0}
                 | {"kind": "mnist", "train_subset": 10000, "val_subset": 2000, "test_subset": 2000, "seed": 0},
      "network": NetworkSpec document, or shorthand {"hidden": [300], "activation": "sigmoid"},
      "train":   TrainConfig fields ("epochs" may replace "iterations"),
      "sweep":   {"axis": "depth", "depths": [2, 3, 4, 5], "total_hidden": 256, "activation": "sigmoid"}
                 | {"axis": "lambda", "family": "c1", "lambdas": [0, 0.1, 1]}
                 | {"axis": "losses", "losses": ["c", "c1:1", "c2:1"]},
      "seeds":   [0, 1, 2],
      "gammas":  [...], "margin_space": "softmax"
    }

Every CSV written here starts with a ``# config {...}`` line echoing the
fully resolved configuration, followed by a header row. Rows are ordered by
(axis value, seed), so outputs are byte-identical across reruns.
"""

from __future__ import annotations

import copy
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import bounds as _bounds
from .data import DataFormatError, Dataset, load_mnist, split, synthetic_blobs
from .loss import LossKind, batch_loss_and_grad, softmax
from .margin import DEFAULT_GAMMAS, MarginCurve, check_gammas, margin_curve, zero_one_error
from .network import (Conv, Dense, NetworkSpec, Pool, allocate_units, backward, build,
                      effective_weight_bound, forward)
from .optim import TrainConfig, TrainingDivergedError, train

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (0.0, 0.01, 0.1, 0.5, 1.0, 5.0, 10.0)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config --

@dataclass
class Experiment:
    """Resolved experiment: datasets, network template, training recipe and seeds."""

    raw: dict
    train_set: Dataset
    val_set: Optional[Dataset]
    test_set: Optional[Dataset]
    spec: Optional[NetworkSpec]
    train: TrainConfig
    seeds: list
    gammas: tuple = DEFAULT_GAMMAS
    margin_space: str = "softmax"
    sweep: dict = field(default_factory=dict)

    def echo(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def load_datasets(data_cfg: dict, data_dir=None) -> tuple:
    """Return ``(train, val, test)``; ``val`` and ``test`` may be None."""
    kind = data_cfg.get("kind", "blobs")
    seed = int(data_cfg.get("seed", 0))
    if kind == "blobs":
        full = synthetic_blobs(int(data_cfg.get("m", 2000)), int(data_cfg.get("d", 10)), int(data_cfg.get("K", 3)),
                               float(data_cfg.get("spread", 1.0)), seed)
        test_fr = float(data_cfg.get("test_fraction", 0.25))
        val_fr = float(data_cfg.get("val_fraction", 0.0))
        fractions = [1.0 - test_fr - val_fr] + [f for f in (val_fr, test_fr) if f > 0]
        parts = split(full, fractions, seed + 1)
        train_set = parts.pop(0)
        val = parts.pop(0) if val_fr > 0 else None
        test = parts.pop(0) if test_fr > 0 else None
        return train_set, val, test
    if kind == "mnist":
        directory = data_cfg.get("dir") or data_dir
        if directory is None:
            raise ConfigError("MNIST data needs --data <dir> or data.dir in the config")
        rng = np.random.default_rng(seed)
        full_train = load_mnist(directory, "train")
        n_train = int(data_cfg.get("train_subset", full_train.m))
        train_set = full_train.subset(np.sort(rng.permutation(full_train.m)[:n_train]))
        # the official test set is halved into validation and test parts
        val_half, test_half = split(load_mnist(directory, "test"), (0.5, 0.5), seed + 1)
        val = val_half.head(int(data_cfg.get("val_subset", val_half.m)))
        test = test_half.head(int(data_cfg.get("test_subset", test_half.m)))
        return train_set, val, test
    raise ConfigError(f"unknown data kind {kind!r}")


def network_from_config(net_cfg: Optional[dict], train_set: Dataset) -> Optional[NetworkSpec]:
    if net_cfg is None:
        return None
    if "layers" in net_cfg:
        doc = dict(net_cfg)
        doc.setdefault("input_dim", train_set.d)
        doc.setdefault("num_classes", train_set.K)
        doc.setdefault("input_bound", train_set.M)
        spec = NetworkSpec.from_dict(doc)
    else:
        hidden = net_cfg.get("hidden", [300])
        layers = [Dense(int(n), net_cfg.get("activation", "sigmoid")) for n in hidden]
        spec = NetworkSpec(train_set.d, layers + [Dense(train_set.K, "identity")], train_set.K,
                           input_bound=train_set.M, use_bias=bool(net_cfg.get("use_bias", True)))
    if spec.input_dim != train_set.d or spec.num_classes != train_set.K:
        raise ConfigError(f"network expects d={spec.input_dim}, K={spec.num_classes}; "
                          f"data has d={train_set.d}, K={train_set.K}")
    return spec


def resolve(doc: dict, data_dir=None, seed: Optional[int] = None) -> Experiment:
    """Turn a config document into an :class:`Experiment` (loads data)."""
    doc = copy.deepcopy(doc)
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    try:
        data_cfg = doc.setdefault("data", {"kind": "blobs"})
        train_set, val, test = load_datasets(data_cfg, data_dir)
        spec = network_from_config(doc.get("network"), train_set)
        train_cfg = TrainConfig.from_dict(doc.get("train", {}), m=train_set.m)
        seeds = [int(s) for s in doc.get("seeds", [train_cfg.seed])]
        if seed is not None:
            seeds = [seed + i for i in range(len(seeds))]
            doc["seeds"] = seeds
        if "repeats" in doc and int(doc["repeats"]) != len(seeds):
            raise ConfigError(f"repeats={doc['repeats']} but {len(seeds)} seeds given")
        gammas = tuple(float(g) for g in check_gammas(doc.get("gammas", DEFAULT_GAMMAS)))
        space = doc.get("margin_space", "softmax")
        if space not in ("softmax", "raw"):
            raise ConfigError("margin_space must be 'softmax' or 'raw'")
    except (DataFormatError, ConfigError):
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    doc["train"] = train_cfg.to_dict()
    if spec is not None:
        doc["network"] = spec.to_dict()
    return Experiment(doc, train_set, val, test, spec, train_cfg, seeds, gammas, space, doc.get("sweep", {}))


# ------------------------------------------------------------------ runs --

@dataclass
class RunResult:
    seed: int
    config: dict
    train_err: float
    test_err: float
    val_err: float
    margin_curve: Optional[MarginCurve]
    effective_A: float
    wall_seconds: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def run_one(spec: NetworkSpec, exp: Experiment, config: TrainConfig) -> RunResult:
    """Train one model; divergence is recorded in ``status`` rather than raised."""
    echo = {"network": spec.to_dict(), "train": config.to_dict()}
    start = time.perf_counter()
    try:
        net, _ = train(spec, exp.train_set, config)
    except TrainingDivergedError as exc:
        log.warning("seed %d diverged at iteration %d", config.seed, exc.iteration)
        return RunResult(config.seed, echo, math.nan, math.nan, math.nan, None, math.nan,
                         time.perf_counter() - start, f"diverged@{exc.iteration}")
    curve = margin_curve(net, exp.train_set, exp.gammas, exp.margin_space)
    return RunResult(
        seed=config.seed, config=echo,
        train_err=zero_one_error(net, exp.train_set),
        test_err=zero_one_error(net, exp.test_set) if exp.test_set is not None else math.nan,
        val_err=zero_one_error(net, exp.val_set) if exp.val_set is not None else math.nan,
        margin_curve=curve, effective_A=effective_weight_bound(net),
        wall_seconds=time.perf_counter() - start)


def _with(config: TrainConfig, **changes) -> TrainConfig:
    d = config.__dict__.copy()
    d.update(changes)
    return TrainConfig(**d)


def _stats(values) -> tuple:
    """(mean, min, std) over finite values; std uses ddof=1 when more than one value."""
    v = np.array([x for x in values if math.isfinite(x)])
    if v.size == 0:
        return math.nan, math.nan, math.nan
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), float(v.min()), std


def mean_curve(results) -> Optional[MarginCurve]:
    curves = [r.margin_curve for r in results if r.ok]
    if not curves:
        return None
    errs = np.mean([c.errors for c in curves], axis=0)
    return MarginCurve(curves[0].gammas, tuple(float(e) for e in errs), curves[0].space)


@dataclass
class SweepResult:
    axis: str
    values: list  # axis values, in output order
    runs: dict  # axis value -> list[RunResult] ordered by seed
    summary: list  # list of dict rows
    experiment: Experiment


def depth_spec(exp: Experiment, depth: int, total_hidden: int, activation: str) -> NetworkSpec:
    width = allocate_units(total_hidden, depth)
    layers = [Dense(width, activation) for _ in range(depth - 1)] + [Dense(exp.train_set.K, "identity")]
    return NetworkSpec(exp.train_set.d, layers, exp.train_set.K, input_bound=exp.train_set.M)


def run_depth_sweep(exp: Experiment) -> SweepResult:
    """Train every depth with a fixed total of hidden units and summarize errors, margins and RA bounds."""
    sw = exp.sweep
    if sw.get("axis", "depth") != "depth":
        raise ConfigError("depth sweep needs sweep.axis = 'depth'")
    depths = [int(L) for L in sw.get("depths", [2, 3, 4, 5])]
    total = int(sw.get("total_hidden", 256))
    activation = sw.get("activation", "sigmoid")
    runs, summary = {}, []
    for depth in depths:
        spec = depth_spec(exp, depth, total, activation)
        runs[depth] = [run_one(spec, exp, _with(exp.train, seed=s)) for s in exp.seeds]
        mean_te, min_te, std_te = _stats([r.test_err for r in runs[depth]])
        mean_A = _stats([r.effective_A for r in runs[depth]])[0]
        row = {"depth": depth, "units_per_layer": allocate_units(total, depth),
               "n_ok": sum(r.ok for r in runs[depth]),
               "mean_test_err": mean_te, "min_test_err": min_te, "std_test_err": std_te,
               "mean_train_err": _stats([r.train_err for r in runs[depth]])[0], "mean_effective_A": mean_A}
        if math.isfinite(mean_A) and mean_A > 0 and exp.train_set.d >= 2:
            params = _bounds.RaBoundParams(M=max(exp.train_set.M, 1e-12), d=exp.train_set.d, m=exp.train_set.m,
                                           A=mean_A, L=depth)
            row["log_ra_bound"] = _bounds.log_ra_upper_bound(params)
        else:
            row["log_ra_bound"] = math.nan
        summary.append(row)
    return SweepResult("depth", depths, runs, summary, exp)


def run_lambda_sweep(exp: Experiment) -> SweepResult:
    """Train one loss family over a list of penalty coefficients; lambda = 0 is the plain cross-entropy baseline."""
    sw = exp.sweep
    family = sw.get("family", "c1")
    if family not in ("c1", "c2"):
        raise ConfigError("lambda sweep family must be 'c1' or 'c2'")
    lambdas = [float(x) for x in sw.get("lambdas", DEFAULT_LAMBDAS)]
    if 0.0 not in lambdas:
        raise ConfigError("lambda list must include 0 (the baseline)")
    if exp.spec is None:
        raise ConfigError("lambda sweep needs a network section")
    runs, summary = {}, []
    for lam in lambdas:
        kind = LossKind("c") if lam == 0 else LossKind(family, lam, exp.train.loss.raw)
        runs[lam] = [run_one(exp.spec, exp, _with(exp.train, loss=kind, seed=s)) for s in exp.seeds]
        mean_te, min_te, std_te = _stats([r.test_err for r in runs[lam]])
        summary.append({"family": family, "lambda": lam, "baseline": int(lam == 0), "loss": str(kind),
                        "mean_test_err": mean_te, "min_test_err": min_te, "std_test_err": std_te,
                        "mean_val_err": _stats([r.val_err for r in runs[lam]])[0],
                        "mean_train_err": _stats([r.train_err for r in runs[lam]])[0]})
    return SweepResult("lambda", lambdas, runs, summary, exp)


def compare_losses(exp: Experiment) -> SweepResult:
    """Train each loss kind on shared seeds; report mean and std test error and mean margin curves."""
    if exp.spec is None:
        raise ConfigError("loss comparison needs a network section")
    kinds = [LossKind.parse(s) for s in exp.sweep.get("losses", ["c", "c1:1", "c2:1"])]
    if len(exp.seeds) < 3:
        log.warning("loss comparison with fewer than 3 seeds")
    runs, summary = {}, []
    for kind in kinds:
        key = str(kind)
        runs[key] = [run_one(exp.spec, exp, _with(exp.train, loss=kind, seed=s)) for s in exp.seeds]
        mean_te, min_te, std_te = _stats([r.test_err for r in runs[key]])
        summary.append({"loss": key, "mean_test_err": mean_te, "std_test_err": std_te, "min_test_err": min_te,
                        "mean_val_err": _stats([r.val_err for r in runs[key]])[0],
                        "mean_train_err": _stats([r.train_err for r in runs[key]])[0]})
    return SweepResult("loss", [str(k) for k in kinds], runs, summary, exp)


# ---------------------------------------------------------------- output --

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def csv_text(rows, columns, echo=None) -> str:
    buf = io.StringIO()
    if echo is not None:
        buf.write(f"# config {echo}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row[c]) for c in columns) + "\n")
    return buf.getvalue()


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _slug(value) -> str:
    return str(value).replace(":", "_").replace(".", "p")


def write_sweep(result: SweepResult, out_dir) -> list:
    """Write summary, per-run and margin-curve CSVs; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    echo = result.experiment.echo()
    prefix = {"depth": "depth", "lambda": "lambda", "loss": "losses"}[result.axis]
    written = []
    columns = list(result.summary[0].keys())
    path = os.path.join(out_dir, f"{prefix}_summary.csv")
    _write(path, csv_text(result.summary, columns, echo))
    written.append(path)

    run_rows = []
    for value in result.values:
        for r in result.runs[value]:
            run_rows.append({result.axis: value, "seed": r.seed, "status": r.status, "train_err": r.train_err,
                             "val_err": r.val_err, "test_err": r.test_err, "effective_A": r.effective_A})
    path = os.path.join(out_dir, f"{prefix}_runs.csv")
    _write(path, csv_text(run_rows, [result.axis, "seed", "status", "train_err", "val_err", "test_err",
                                     "effective_A"], echo))
    written.append(path)

    curves = {value: mean_curve(result.runs[value]) for value in result.values}
    gammas = result.experiment.gammas
    wide = []
    for i, g in enumerate(gammas):
        row = {"gamma": g}
        for value, curve in curves.items():
            row[f"{result.axis}={value}"] = curve.errors[i] if curve is not None else math.nan
        wide.append(row)
    path = os.path.join(out_dir, f"{prefix}_margin_curves.csv")
    _write(path, csv_text(wide, ["gamma"] + [f"{result.axis}={v}" for v in result.values], echo))
    written.append(path)
    for value, curve in curves.items():
        if curve is not None:
            path = os.path.join(out_dir, f"margin_curve_{result.axis}_{_slug(value)}.csv")
            curve.to_csv(path, header_comment=f"config {echo}")
            written.append(path)

    timing = {f"{result.axis}={v}": [round(r.wall_seconds, 3) for r in result.runs[v]] for v in result.values}
    with open(os.path.join(out_dir, "timing.json"), "w") as fh:
        json.dump(timing, fh, indent=1)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(result.experiment.raw, fh, indent=1, sort_keys=True)
    return written


# ------------------------------------------------------------- gradcheck --

@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: Optional[tuple]  # (layer, "weight"|"bias", index)
    checked: int
    skipped: int


def _discrete_state(net, trace, outputs, kind: LossKind, labels):
    """Everything piecewise in the objective: relu masks, max-pool argmaxes, penalty competitors."""
    state = []
    for layer, pre, arg in zip(net.spec.layers, trace.pre, trace.argmax):
        if getattr(layer, "activation", None) == "relu":
            state.append(pre > 0)
        if arg is not None:
            state.append(arg)
    if kind.name == "c1" and kind.lam > 0:
        v = outputs if kind.raw else softmax(outputs)
        masked = v.copy()
        masked[np.arange(len(labels)), np.asarray(labels) - 1] = -np.inf
        state.append(np.argmax(masked, axis=1))
    return state


def _same_state(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


# absolute floor under the relative-error denominator, for coordinates whose gradient is ~0
REL_ERROR_FLOOR = 1e-7


def gradient_check(spec: NetworkSpec, kind: LossKind, seed: int, step: float = 1e-5, batch: int = 4,
                   max_parameters: int = 500) -> GradCheckResult:
    """Compare backprop gradients of the mean batch loss with central differences, parameter by parameter.

    Coordinates whose ``+-step`` perturbation changes a relu mask, a max-pool
    argmax or a C1 competitor are skipped (the loss is not differentiable
    across those switches).
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    net = build(spec, seed)
    if net.n_parameters > max_parameters:
        raise ValueError(f"network has {net.n_parameters} parameters, limit is {max_parameters}")
    rng = np.random.default_rng([seed, 2])
    bound = spec.input_bound if spec.input_bound > 0 else 1.0
    x = rng.uniform(-bound, bound, size=(batch, spec.input_dim))
    y = rng.integers(1, spec.num_classes + 1, size=batch)
    outputs, trace = forward(net, x)
    _, grad_out = batch_loss_and_grad(kind, outputs, y)
    grads, _ = backward(net, trace, grad_out)
    base_state = _discrete_state(net, trace, outputs, kind, y)

    def evaluate():
        f, tr = forward(net, x)
        return batch_loss_and_grad(kind, f, y)[0].total, _discrete_state(net, tr, f, kind, y)

    worst, where, checked, skipped = 0.0, None, 0, 0
    for li, name, param in net.parameters():
        analytic = grads[li][0 if name == "weight" else 1]
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + step
            lp, sp = evaluate()
            param[idx] = orig - step
            lm, sm = evaluate()
            param[idx] = orig
            if not (_same_state(sp, base_state) and _same_state(sm, base_state)):
                skipped += 1
                continue
            numeric = (lp - lm) / (2 * step)
            a = analytic[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), REL_ERROR_FLOOR)
            checked += 1
            if where is None or rel > worst:
                worst, where = rel, (li, name, tuple(int(i) for i in idx))
    return GradCheckResult(worst, where, checked, skipped)


def gradcheck_specs() -> list:
    """Small dense and conv+pool networks (<= 500 parameters) for every activation."""
    out = []
    for act in ("sigmoid", "tanh", "relu"):
        out.append((f"dense-{act}", NetworkSpec(6, [Dense(5, act), Dense(4, act), Dense(3, "identity")], 3)))
        out.append((f"conv-maxpool-{act}", NetworkSpec(
            36, [Conv(2, (3, 3), 1, act), Pool("max", 4), Dense(3, "identity")], 3, input_shape=(1, 6, 6))))
    out.append(("conv-avgpool-stride2-sigmoid", NetworkSpec(
        49, [Conv(3, (3, 3), 2, "sigmoid"), Pool("avg", 3, (1, 3)), Dense(4, "identity")], 4,
        input_shape=(1, 7, 7))))
    return out


def gradcheck_suite(seed: int = 0, step: float = 1e-5, losses=("c", "c1:0.5", "c2:0.5")) -> list:
    """Rows ``(name, loss, seed, result)`` for every spec in :func:`gradcheck_specs` and every loss."""
    rows = []
    for i, (name, spec) in enumerate(gradcheck_specs()):
        for j, loss in enumerate(losses):
            s = seed + 10 * i + j
            rows.append((name, loss, s, gradient_check(spec, LossKind.parse(loss), s, step)))
    return rows


# ----------------------------------------------------------------- plots --

PLOT_INPUTS = ("depth_summary.csv", "lambda_summary.csv", "margin_curve_*.csv", "history.csv")


def _gp_header(title, xlabel, ylabel, output):
    return (f"set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 800,600\n"
            f"set output '{output}'\nset title '{title}'\nset xlabel '{xlabel}'\nset ylabel '{ylabel}'\n")


def emit_plots(results_dir) -> list:
    """Write gnuplot scripts for whichever result CSVs exist in ``results_dir``."""
    names = sorted(os.listdir(results_dir)) if os.path.isdir(results_dir) else []
    written = []

    def emit(name, text):
        path = os.path.join(results_dir, name)
        _write(path, text)
        written.append(path)

    if "depth_summary.csv" in names:
        emit("depth_test_error.gp", _gp_header("Test error vs depth", "depth L", "test error", "depth_test_error.png")
             + "plot 'depth_summary.csv' using 1:4 with linespoints title 'mean', \\\n"
               "     'depth_summary.csv' using 1:5 with linespoints title 'min'\n")
    if "lambda_summary.csv" in names:
        emit("lambda_test_error.gp", _gp_header("Test error vs lambda", "lambda", "mean test error",
                                                "lambda_test_error.png")
             + "plot 'lambda_summary.csv' using 2:5 with linespoints title 'mean test error'\n")
    curves = [n for n in names if n.startswith("margin_curve") and n.endswith(".csv")]
    if curves:
        series = ", \\\n     ".join(f"'{n}' using 1:2 with lines title '{n[len('margin_curve'):-4].strip('_') or 'curve'}'"
                                    for n in curves)
        emit("margin_curves.gp", _gp_header("Empirical margin error", "gamma", "err_S^gamma", "margin_curves.png")
             + f"plot {series}\n")
    if "history.csv" in names:
        emit("training_loss.gp", _gp_header("Training loss", "iteration", "loss", "training_loss.png")
             + "plot 'history.csv' using 1:3 with lines title 'loss'\n")
    if not written:
        raise FileNotFoundError(f"no result CSVs in {results_dir}; expected one of: {', '.join(PLOT_INPUTS)}")
    return written
