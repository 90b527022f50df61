"""Softmax cross entropy and its margin-penalized variants.

``C``  : cross entropy of the softmaxed outputs.
``C1`` : ``C + lam * (1 - rho)**2`` where ``rho`` is the margin of the softmaxed outputs.
``C2`` : ``C + lam / (K - 1) * sum_{k != y} (1 - (p_y - p_k))**2``.

Labels are 1-based (``y`` in ``1..K``) throughout. The competitor
``argmax_{k != y}`` is resolved to the lowest index on ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class LossKind:
    name: str = "c"
    lam: float = 0.0
    raw: bool = False  # penalize margins of raw outputs instead of softmax probabilities

    def __post_init__(self):
        if self.name not in ("c", "c1", "c2"):
            raise ValueError(f"unknown loss {self.name!r}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.name == "c" and self.lam != 0:
            raise ValueError("plain cross entropy takes no lambda")

    @classmethod
    def parse(cls, text: str) -> "LossKind":
        """Parse ``"c"``, ``"c1:<lam>"`` or ``"c2:<lam>"`` (an optional ``:raw`` suffix selects raw-output margins)."""
        parts = text.strip().lower().split(":")
        raw = parts[-1] == "raw"
        if raw:
            parts = parts[:-1]
        name = parts[0]
        if name == "c" and len(parts) == 1:
            return cls("c", 0.0, raw)
        if name in ("c1", "c2") and len(parts) == 2:
            try:
                lam = float(parts[1])
            except ValueError:
                raise ValueError(f"bad lambda in loss {text!r}") from None
            return cls(name, lam, raw)
        raise ValueError(f"cannot parse loss {text!r}; expected 'c', 'c1:<lambda>' or 'c2:<lambda>'")

    def __str__(self):
        s = "c" if self.name == "c" else f"{self.name}:{self.lam:g}"
        return s + (":raw" if self.raw else "")


@dataclass(frozen=True)
class LossValue:
    total: float
    base_ce: float
    penalty: float


def softmax(outputs) -> np.ndarray:
    """Row-wise max-shifted softmax; accepts a vector or a ``(b, K)`` matrix."""
    f = np.asarray(outputs, dtype=np.float64)
    e = np.exp(f - f.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _index(y, k):
    y = int(y)
    if not 1 <= y <= k:
        raise ValueError(f"label {y} outside 1..{k}")
    return y - 1


def cross_entropy(probs, y) -> float:
    p = np.asarray(probs, dtype=np.float64)
    i = _index(y, p.shape[-1])
    return float(-np.log(max(p[i], PROB_FLOOR)))


def competitor(values, y) -> int:
    """0-based index of the largest entry other than label ``y`` (lowest index on ties)."""
    v = np.array(values, dtype=np.float64)
    v[_index(y, v.shape[-1])] = -np.inf
    return int(np.argmax(v))


def penalty_c1(probs, y, lam) -> float:
    p = np.asarray(probs, dtype=np.float64)
    i = _index(y, p.shape[-1])
    rho = p[i] - p[competitor(p, y)]
    return float(lam * (1.0 - rho) ** 2)


def penalty_c2(probs, y, lam) -> float:
    p = np.asarray(probs, dtype=np.float64)
    k = p.shape[-1]
    i = _index(y, k)
    gaps = 1.0 - (p[i] - np.delete(p, i))
    return float(lam / (k - 1) * np.sum(gaps ** 2))


def _labels0(labels, k):
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 1 or y.max() > k):
        raise ValueError(f"labels must lie in 1..{k}")
    return y - 1


def _penalty_terms(kind: LossKind, v: np.ndarray, y0: np.ndarray):
    """Per-sample penalty and its gradient w.r.t. ``v`` (probabilities or raw outputs)."""
    b, k = v.shape
    rows = np.arange(b)
    if kind.name == "c1":
        masked = v.copy()
        masked[rows, y0] = -np.inf
        comp = np.argmax(masked, axis=1)
        gap = 1.0 - (v[rows, y0] - v[rows, comp])
        pen = kind.lam * gap ** 2
        dv = np.zeros_like(v)
        dv[rows, y0] = -2.0 * kind.lam * gap
        dv[rows, comp] = 2.0 * kind.lam * gap
        return pen, dv
    gaps = 1.0 - (v[rows, y0][:, None] - v)
    gaps[rows, y0] = 0.0
    scale = kind.lam / (k - 1)
    pen = scale * np.sum(gaps ** 2, axis=1)
    dv = 2.0 * scale * gaps
    dv[rows, y0] = -2.0 * scale * np.sum(gaps, axis=1)
    return pen, dv


def batch_loss_and_grad(kind: LossKind, outputs, labels) -> tuple[LossValue, np.ndarray]:
    """Mean loss over a ``(b, K)`` batch of raw outputs and its gradient w.r.t. those outputs."""
    f = np.asarray(outputs, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    b, k = f.shape
    y0 = _labels0(labels, k)
    rows = np.arange(b)
    p = softmax(f)
    ce = -np.log(np.maximum(p[rows, y0], PROB_FLOOR))
    grad = p.copy()
    grad[rows, y0] -= 1.0
    base = float(ce.mean())
    if kind.name == "c" or kind.lam == 0:
        return LossValue(base, base, 0.0), grad / b
    if kind.raw:
        pen, dv = _penalty_terms(kind, f, y0)
        grad += dv
    else:
        pen, dp = _penalty_terms(kind, p, y0)
        # chain through softmax: J^T dp = p * (dp - <dp, p>)
        grad += p * (dp - np.sum(dp * p, axis=1, keepdims=True))
    penalty = float(pen.mean())
    return LossValue(base + penalty, base, penalty), grad / b


def loss_and_grad(kind: LossKind, outputs, y) -> tuple[LossValue, np.ndarray]:
    """Single-sample loss and gradient w.r.t. the raw output vector."""
    value, grad = batch_loss_and_grad(kind, np.asarray(outputs, dtype=np.float64)[None, :], [y])
    return value, grad[0]


def loss_value(kind: LossKind, outputs, y) -> float:
    """Reference evaluation through the scalar per-sample functions."""
    f = np.asarray(outputs, dtype=np.float64)
    v = f if kind.raw else softmax(f)
    total = cross_entropy(softmax(f), y)
    if kind.name == "c1":
        total += penalty_c1(v, y, kind.lam)
    elif kind.name == "c2":
        total += penalty_c2(v, y, kind.lam)
    return total
