"""Mini-batch SGD with classical momentum, coupled weight decay and LR schedules."""

from __future__ import annotations

import bisect
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .loss import LossKind, batch_loss_and_grad
from .margin import zero_one_error
from .network import Network, NetworkSpec, backward, build, forward


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration, message):
        super().__init__(f"training diverged at iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class InversePoly:
    """``base_lr * (1 + a*T) ** -power``."""

    base_lr: float = 0.01
    a: float = 1e-4
    power: float = 0.75


@dataclass(frozen=True)
class Steps:
    """Piecewise-constant rates; ``rates[i]`` applies while ``T <= boundaries[i]``.

    A boundary belongs to the interval it closes, so with boundaries
    ``(60000, 65000)`` iteration 65000 still uses the middle rate.
    """

    boundaries: tuple
    rates: tuple

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(self.boundaries))
        object.__setattr__(self, "rates", tuple(self.rates))
        if len(self.rates) != len(self.boundaries) + 1:
            raise ValueError("Steps needs exactly one more rate than boundaries")
        if any(b2 <= b1 for b1, b2 in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("Steps boundaries must be strictly ascending")
        if any(r <= 0 for r in self.rates):
            raise ValueError("rates must be positive")


@dataclass(frozen=True)
class Constant:
    lr: float = 0.01


Schedule = Union[InversePoly, Steps, Constant]


def learning_rate(schedule: Schedule, T: int) -> float:
    if T < 0:
        raise ValueError("iteration must be >= 0")
    if isinstance(schedule, InversePoly):
        return schedule.base_lr * (1.0 + schedule.a * T) ** (-schedule.power)
    if isinstance(schedule, Steps):
        return schedule.rates[bisect.bisect_left(schedule.boundaries, T)]
    return schedule.lr


def schedule_from_dict(doc: dict) -> Schedule:
    kind = doc.get("kind", "inverse_poly")
    if kind == "inverse_poly":
        return InversePoly(float(doc.get("base_lr", 0.01)), float(doc.get("a", 1e-4)), float(doc.get("power", 0.75)))
    if kind == "steps":
        return Steps(tuple(int(b) for b in doc["boundaries"]), tuple(float(r) for r in doc["rates"]))
    if kind == "constant":
        return Constant(float(doc["lr"]))
    raise ValueError(f"unknown schedule kind {kind!r}")


def schedule_to_dict(schedule: Schedule) -> dict:
    if isinstance(schedule, InversePoly):
        return {"kind": "inverse_poly", "base_lr": schedule.base_lr, "a": schedule.a, "power": schedule.power}
    if isinstance(schedule, Steps):
        return {"kind": "steps", "boundaries": list(schedule.boundaries), "rates": list(schedule.rates)}
    return {"kind": "constant", "lr": schedule.lr}


@dataclass(frozen=True)
class TrainConfig:
    loss: LossKind = LossKind()
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: Schedule = InversePoly()
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def to_dict(self) -> dict:
        return {"loss": str(self.loss), "batch_size": self.batch_size, "momentum": self.momentum,
                "weight_decay": self.weight_decay, "schedule": schedule_to_dict(self.schedule),
                "iterations": self.iterations, "seed": self.seed}

    @classmethod
    def from_dict(cls, doc: dict, m: Optional[int] = None) -> "TrainConfig":
        """Build from a config mapping; ``epochs`` may replace ``iterations`` when the training size ``m`` is known."""
        batch = int(doc.get("batch_size", 64))
        if "iterations" in doc:
            iterations = int(doc["iterations"])
        elif "epochs" in doc:
            if m is None:
                raise ValueError("'epochs' needs the training-set size")
            iterations = iterations_for_epochs(m, batch, int(doc["epochs"]))
        else:
            iterations = 1000
        return cls(loss=LossKind.parse(str(doc.get("loss", "c"))), batch_size=batch,
                   momentum=float(doc.get("momentum", 0.9)), weight_decay=float(doc.get("weight_decay", 5e-4)),
                   schedule=schedule_from_dict(doc.get("schedule", {})), iterations=iterations,
                   seed=int(doc.get("seed", 0)))


def iterations_for_epochs(m: int, batch_size: int, epochs: int) -> int:
    return math.ceil(m / batch_size) * epochs


@dataclass
class OptimizerState:
    velocity: list
    T: int = 0

    @classmethod
    def zeros_like(cls, net: Network) -> "OptimizerState":
        return cls([(None if w is None else np.zeros_like(w), None if b is None else np.zeros_like(b))
                    for w, b in zip(net.weights, net.biases)])


def sgd_step(net: Network, grads: list, state: OptimizerState, config: TrainConfig) -> tuple:
    """One in-place update: ``v <- mu*v - lr*(g + wd*w)``, ``w <- w + v``. Biases get no decay."""
    lr = learning_rate(config.schedule, state.T)
    mu, wd = config.momentum, config.weight_decay
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if w is None:
            continue
        gw, gb = grads[i]
        vw, vb = state.velocity[i]
        if gw.shape != w.shape or (b is not None and gb.shape != b.shape):
            raise ValueError(f"gradient shape mismatch at layer {i}")
        vw *= mu
        vw -= lr * (gw + wd * w)
        w += vw
        if b is not None:
            vb *= mu
            vb -= lr * gb
            b += vb
    state.T += 1
    return net, state


@dataclass
class History:
    """Per-iteration training log and per-epoch evaluation log."""

    iterations: list = field(default_factory=list)  # (iter, lr, loss, base_ce, penalty)
    epochs: list = field(default_factory=list)  # (epoch, train_err, test_err)

    def iterations_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iter,lr,loss,base_ce,penalty\n")
        for it, lr, loss, ce, pen in self.iterations:
            buf.write(f"{it},{lr:.9g},{loss:.9g},{ce:.9g},{pen:.9g}\n")
        return buf.getvalue()

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_err,test_err\n")
        for ep, tr, te in self.epochs:
            buf.write(f"{ep},{tr:.9g},{te:.9g}\n")
        return buf.getvalue()


def _check_finite(net, state, iteration):
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        for arr in (w, b, *state.velocity[i]):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise TrainingDivergedError(iteration, f"non-finite parameters in layer {i}")


def train(spec: NetworkSpec, dataset, config: TrainConfig, test=None, evaluate_epochs: bool = False,
          net: Optional[Network] = None) -> tuple:
    """Train with mini-batch SGD and return ``(last-iteration network, History)``.

    Each epoch visits a fresh seeded permutation of the data; the final
    partial batch of an epoch is kept. With ``evaluate_epochs`` the training
    and test 0-1 errors are logged after every completed epoch (test error is
    NaN without a test set).
    """
    if dataset.d != spec.input_dim:
        raise ValueError(f"dataset has {dataset.d} features, spec expects {spec.input_dim}")
    net = build(spec, config.seed) if net is None else net
    state = OptimizerState.zeros_like(net)
    history = History()
    rng = np.random.default_rng([config.seed, 1])
    m, bs = dataset.m, config.batch_size
    per_epoch = math.ceil(m / bs)
    order = None
    for it in range(config.iterations):
        pos = it % per_epoch
        if pos == 0:
            order = rng.permutation(m)
        idx = order[pos * bs:(pos + 1) * bs]
        x, y = dataset.features[idx], dataset.labels[idx]
        outputs, trace = forward(net, x)
        value, grad_out = batch_loss_and_grad(config.loss, outputs, y)
        if not math.isfinite(value.total):
            raise TrainingDivergedError(it, f"loss is {value.total}")
        grads, _ = backward(net, trace, grad_out)
        lr = learning_rate(config.schedule, state.T)
        sgd_step(net, grads, state, config)
        _check_finite(net, state, it)
        history.iterations.append((it, lr, value.total, value.base_ce, value.penalty))
        if evaluate_epochs and pos == per_epoch - 1:
            test_err = zero_one_error(net, test) if test is not None else math.nan
            history.epochs.append(((it + 1) // per_epoch, zero_one_error(net, dataset), test_err))
    return net, history
