"""Margin-penalized neural network training and margin-bound analysis."""

from .bounds import (BettiBoundParams, MarginBoundParams, PfaffianComplexity, RaBoundParams, betti_log_bound,
                     margin_bound, pfaffian_for_activation, ra_upper_bound)
from .data import Dataset, load_mnist_idx, per_feature_mean_center, split, synthetic_blobs
from .estimator import MarginNetClassifier, MeanCenterer
from .loss import LossKind, LossValue, cross_entropy, loss_and_grad, penalty_c1, penalty_c2, softmax
from .margin import DEFAULT_GAMMAS, MarginCurve, empirical_margin_error, margin, margin_curve, zero_one_error
from .network import (Conv, Dense, Network, NetworkSpec, Pool, allocate_units, backward, build,
                      effective_weight_bound, forward)
from .optim import Constant, InversePoly, Steps, TrainConfig, learning_rate, sgd_step, train

__version__ = "0.1.0"
