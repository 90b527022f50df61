"""Closed-form capacity and generalization bound calculators.

* :func:`ra_upper_bound` -- Rademacher average of depth-``L`` networks with
  per-unit L1 weight budget ``A``: ``c * M * sqrt(ln d / m) * (p * L_phi * A)**L``.
* :func:`betti_log_bound` -- natural log of the Betti-number complexity bound
  for Pfaffian activations, with the unknown big-O constant set to one.
* :func:`margin_bound` -- the multi-class margin bound minimized over a grid
  of margin coefficients.

The values are capacity indicators for comparing architectures, not tight
guarantees; the constant ``c`` is unknown and defaults to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .margin import MarginCurve

# 1-Lipschitz for all supported activations (the usual convention for sigmoid/tanh/relu)
LIPSCHITZ = {"sigmoid": 1.0, "tanh": 1.0, "relu": 1.0, "identity": 1.0}


class HypothesisError(ValueError):
    """The parameters fall outside the conditions the bound is stated for."""


class UnsupportedActivation(ValueError):
    pass


@dataclass(frozen=True)
class RaBoundParams:
    M: float
    d: int
    m: int
    A: float
    L: int
    p: int = 1
    L_phi: float = 1.0
    c: float = 1.0

    def validate(self):
        if self.d < 2:
            raise ValueError(f"input dimension d must be >= 2 so that ln d > 0, got {self.d}")
        for name in ("M", "m", "A", "L", "p", "L_phi", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class PfaffianComplexity:
    alpha: int
    beta: int
    eta: int

    def __post_init__(self):
        if min(self.alpha, self.beta, self.eta) < 1:
            raise ValueError("Pfaffian complexity entries must be >= 1")


@dataclass(frozen=True)
class BettiBoundParams:
    K: int
    d: int
    h: int
    L: int
    pf: PfaffianComplexity


@dataclass(frozen=True)
class MarginBoundParams:
    delta: float
    m: int
    K: int
    R: float
    curve: MarginCurve


def ra_upper_bound(params: RaBoundParams, variant: str = "closed_form") -> float:
    """Upper bound on the Rademacher average of the network class.

    ``variant="layerwise"`` evaluates ``c*A*M*sqrt(ln d/m) * (2*p*L_phi*A)**(L-1)``,
    the product that the layer-by-layer argument accumulates before it is
    folded into the headline form.
    """
    params.validate()
    base = params.c * params.M * math.sqrt(math.log(params.d) / params.m)
    if variant == "closed_form":
        return base * (params.p * params.L_phi * params.A) ** params.L
    if variant == "layerwise":
        return base * params.A * (2 * params.p * params.L_phi * params.A) ** (params.L - 1)
    raise ValueError(f"unknown variant {variant!r}")


def log_ra_upper_bound(params: RaBoundParams) -> float:
    """``ln`` of :func:`ra_upper_bound`; stays finite when the bound overflows."""
    params.validate()
    return (math.log(params.c * params.M) + 0.5 * (math.log(math.log(params.d)) - math.log(params.m))
            + params.L * math.log(params.p * params.L_phi * params.A))


_PFAFFIAN = {"arctan": PfaffianComplexity(3, 1, 2), "tanh": PfaffianComplexity(2, 1, 1)}


def pfaffian_for_activation(name: str) -> PfaffianComplexity:
    try:
        return _PFAFFIAN[name]
    except KeyError:
        raise UnsupportedActivation(
            f"no Pfaffian complexity known for {name!r}; supported: {sorted(_PFAFFIAN)}") from None


def _betti_base(params: BettiBoundParams) -> int:
    a, b = params.pf.alpha, params.pf.beta
    return params.d * ((a + b - 1 + a * b) * (params.L - 1) + b * (a + 1))


def _check_betti(params: BettiBoundParams):
    if params.K < 2:
        raise ValueError("K must be >= 2")
    if params.L < 2:
        raise ValueError("L must be >= 2")
    if params.d < 1 or params.h < 1:
        raise ValueError("d and h must be >= 1")
    if params.d > params.h * params.pf.eta:
        raise HypothesisError(f"bound requires d <= h*eta, got d={params.d} > {params.h * params.pf.eta}")


def betti_log_bound(params: BettiBoundParams) -> float:
    """Natural log of ``(K-1)**(d+1) * 2**(h*eta*(h*eta-1)/2) * base**(d + h*eta)``."""
    _check_betti(params)
    he = params.h * params.pf.eta
    return ((params.d + 1) * math.log(params.K - 1)
            + he * (he - 1) / 2 * math.log(2)
            + (params.d + he) * math.log(_betti_base(params)))


def betti_bound_exact(params: BettiBoundParams) -> int:
    """The same bound as an exact integer (feasible only for small instances)."""
    _check_betti(params)
    he = params.h * params.pf.eta
    return (params.K - 1) ** (params.d + 1) * 2 ** (he * (he - 1) // 2) * _betti_base(params) ** (params.d + he)


def margin_bound_terms(gamma: float, err: float, R: float, K: int, m: int, delta: float) -> tuple:
    """The four summands of the margin bound at one margin coefficient."""
    capacity = 8 * K * (2 * K - 1) / gamma * R
    loglog = math.sqrt(math.log(math.log2(2.0 / gamma)) / m)
    confidence = math.sqrt(math.log(2.0 / delta) / (2 * m))
    return err, capacity, loglog, confidence


def margin_bound(params: MarginBoundParams) -> tuple[float, float]:
    """Minimum of the margin bound over the curve's grid; returns ``(value, argmin_gamma)``.

    Un-based logarithms are natural logs. Ties go to the smallest gamma.
    """
    if not 0 < params.delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if params.m < 1 or params.K < 2 or params.R < 0:
        raise ValueError("need m >= 1, K >= 2, R >= 0")
    gammas = np.asarray(params.curve.gammas, dtype=np.float64)
    if np.any(gammas >= 1) or np.any(gammas <= 0):
        raise ValueError("every gamma must lie in (0, 1) for the log-log term to be defined")
    best, best_gamma = math.inf, math.nan
    for gamma, err in zip(params.curve.gammas, params.curve.errors):
        value = sum(margin_bound_terms(gamma, err, params.R, params.K, params.m, params.delta))
        if value < best:
            best, best_gamma = value, gamma
    return best, best_gamma
