"""Margins, empirical margin error curves and 0-1 error."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .loss import softmax
from .network import Network, ShapeError, forward

DEFAULT_GAMMAS = tuple(round(0.05 * i, 2) for i in range(1, 20))


def margin(outputs, y) -> float:
    """True-class output minus the largest other output."""
    f = np.asarray(outputs, dtype=np.float64)
    k = f.shape[-1]
    if k < 2:
        raise ValueError("margin needs at least two classes")
    if not 1 <= int(y) <= k:
        raise ValueError(f"label {y} outside 1..{k}")
    others = np.delete(f, int(y) - 1)
    return float(f[int(y) - 1] - others.max())


def margins(outputs, labels) -> np.ndarray:
    """Vectorized :func:`margin` over a ``(m, K)`` output matrix."""
    f = np.asarray(outputs, dtype=np.float64)
    y0 = np.asarray(labels, dtype=np.int64) - 1
    m, k = f.shape
    if k < 2:
        raise ValueError("margin needs at least two classes")
    if y0.shape != (m,) or (m and (y0.min() < 0 or y0.max() >= k)):
        raise ValueError(f"labels must be a length-{m} vector in 1..{k}")
    rows = np.arange(m)
    masked = f.copy()
    masked[rows, y0] = -np.inf
    return f[rows, y0] - masked.max(axis=1)


def empirical_margin_error(margin_values, gamma) -> float:
    """Fraction of margins ``<= gamma``."""
    r = np.asarray(margin_values, dtype=np.float64).reshape(-1)
    if r.size == 0:
        raise ValueError("empirical margin error of an empty sample")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.count_nonzero(r <= gamma) / r.size


def check_gammas(gammas) -> np.ndarray:
    g = np.asarray(gammas, dtype=np.float64).reshape(-1)
    if g.size == 0:
        raise ValueError("empty gamma grid")
    if np.any(g <= 0) or np.any(g >= 1):
        raise ValueError("every gamma must lie in (0, 1)")
    if np.any(np.diff(g) <= 0):
        raise ValueError("gamma grid must be strictly ascending")
    return g


@dataclass(frozen=True)
class MarginCurve:
    gammas: tuple
    errors: tuple
    space: str = "softmax"

    def __post_init__(self):
        check_gammas(self.gammas)
        if len(self.errors) != len(self.gammas):
            raise ValueError("gammas and errors differ in length")

    def to_csv(self, path=None, header_comment=None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        buf.write("gamma,err\n")
        for g, e in zip(self.gammas, self.errors):
            buf.write(f"{g:.9g},{e:.9g}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, space="softmax") -> "MarginCurve":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        if not rows or rows[0][:2] != ["gamma", "err"]:
            raise ValueError(f"{path}: expected a 'gamma,err' header")
        return cls(tuple(float(r[0]) for r in rows[1:]), tuple(float(r[1]) for r in rows[1:]), space)


def curve_from_margins(margin_values, gammas=DEFAULT_GAMMAS, space="softmax") -> MarginCurve:
    g = check_gammas(gammas)
    r = np.sort(np.asarray(margin_values, dtype=np.float64).reshape(-1))
    if r.size == 0:
        raise ValueError("empirical margin error of an empty sample")
    counts = np.searchsorted(r, g, side="right")
    return MarginCurve(tuple(float(x) for x in g), tuple(float(c) / r.size for c in counts), space)


def _outputs(net: Network, features, chunk=4096) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise ShapeError(f"dataset has shape {x.shape}, network expects {net.spec.input_dim} features")
    parts = [forward(net, x[i:i + chunk])[0] for i in range(0, len(x), chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, net.spec.num_classes))


def dataset_margins(net: Network, dataset, space="softmax") -> np.ndarray:
    f = _outputs(net, dataset.features)
    if space == "softmax":
        f = softmax(f)
    elif space != "raw":
        raise ValueError(f"space must be 'softmax' or 'raw', got {space!r}")
    return margins(f, dataset.labels)


def margin_curve(net: Network, dataset, gammas=DEFAULT_GAMMAS, space="softmax") -> MarginCurve:
    """Empirical margin error of ``net`` on ``dataset`` over a grid of margin coefficients."""
    check_gammas(gammas)
    return curve_from_margins(dataset_margins(net, dataset, space), gammas, space)


def predict_labels(net: Network, features) -> np.ndarray:
    """1-based argmax predictions (lowest index wins ties)."""
    return np.argmax(_outputs(net, features), axis=1) + 1


def zero_one_error(net: Network, dataset) -> float:
    labels = np.asarray(dataset.labels)
    if labels.size == 0:
        raise ValueError("zero-one error of an empty dataset")
    return float(np.count_nonzero(predict_labels(net, dataset.features) != labels) / labels.size)
