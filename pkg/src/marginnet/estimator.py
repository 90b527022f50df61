"""scikit-learn compatible wrappers around the network, losses and trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .loss import LossKind, softmax
from .margin import DEFAULT_GAMMAS, curve_from_margins, margins
from .network import Dense, NetworkSpec, effective_weight_bound, forward
from .optim import Constant, InversePoly, TrainConfig, iterations_for_epochs, train


class MarginNetClassifier(ClassifierMixin, BaseEstimator):
    """Fully connected network trained by SGD on cross entropy with an optional margin penalty.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Width of each hidden layer.
    activation : {"sigmoid", "tanh", "relu"}
    loss : str
        ``"c"``, ``"c1:<lambda>"`` or ``"c2:<lambda>"``.
    learning_rate : float
        Initial learning rate.
    lr_schedule : {"inverse_poly", "constant"}
    batch_size, momentum, weight_decay : SGD settings.
    epochs : int
        Passes over the training data (ignored when ``max_iter`` is set).
    max_iter : int or None
        Exact number of SGD iterations.
    input_bound : float or None
        Declared bound M on ``|x|``; defaults to the largest magnitude seen in ``fit``.
    random_state : int
    """

    def __init__(self, hidden_layer_sizes=(300,), activation="sigmoid", loss="c", learning_rate=0.1,
                 lr_schedule="inverse_poly", batch_size=64, momentum=0.9, weight_decay=5e-4, epochs=5,
                 max_iter=None, use_bias=True, input_bound=None, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.loss = loss
        self.learning_rate = learning_rate
        self.lr_schedule = lr_schedule
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.max_iter = max_iter
        self.use_bias = use_bias
        self.input_bound = input_bound
        self.random_state = random_state

    def _train_config(self, m):
        if self.lr_schedule == "inverse_poly":
            schedule = InversePoly(self.learning_rate)
        elif self.lr_schedule == "constant":
            schedule = Constant(self.learning_rate)
        else:
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        iterations = self.max_iter if self.max_iter is not None else iterations_for_epochs(
            m, self.batch_size, self.epochs)
        return TrainConfig(loss=LossKind.parse(self.loss), batch_size=self.batch_size, momentum=self.momentum,
                           weight_decay=self.weight_decay, schedule=schedule, iterations=iterations,
                           seed=self.random_state)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        bound = float(np.abs(X).max()) if self.input_bound is None else float(self.input_bound)
        k = len(self.classes_)
        layers = [Dense(int(n), self.activation) for n in self.hidden_layer_sizes] + [Dense(k, "identity")]
        spec = NetworkSpec(X.shape[1], layers, k, input_bound=bound, use_bias=self.use_bias)
        dataset = Dataset(X, encoded + 1, k, max(bound, float(np.abs(X).max())))
        self.network_, self.history_ = train(spec, dataset, self._train_config(len(X)))
        self.effective_weight_bound_ = effective_weight_bound(self.network_)
        return self

    def _outputs(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return forward(self.network_, X)[0]

    def decision_function(self, X):
        return self._outputs(X)

    def predict_proba(self, X):
        return softmax(self._outputs(X))

    def predict(self, X):
        scores = self._outputs(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def _encode(self, y):
        y = np.asarray(y)
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if not np.all(self.classes_[idx] == y):
            raise ValueError("y contains labels not seen during fit")
        return idx + 1

    def margins(self, X, y, space="softmax"):
        f = self._outputs(X)
        return margins(softmax(f) if space == "softmax" else f, self._encode(y))

    def margin_curve(self, X, y, gammas=DEFAULT_GAMMAS, space="softmax"):
        return curve_from_margins(self.margins(X, y, space), gammas, space)


class MeanCenterer(TransformerMixin, BaseEstimator):
    """Subtract the per-feature mean seen during ``fit``."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        return check_array(X, dtype=np.float64) - self.mean_
