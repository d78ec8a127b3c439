"""scikit-learn compatible wrapper around the training and evaluation routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attack import AttackConfig, attack_inputs
from .data import Dataset
from .evaluation import evaluate_many
from .exceptions import ConfigurationError
from .nn import forward, init_mlp, softmax_probs
from .training import TrainConfig, train


def check_unit_box(X, name="X"):
    """Reject features outside [0, 1]; the eps-ball threat model assumes that box."""
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]; got range [{X.min():g}, {X.max():g}]")
    return X


class MarginAwareAdversarialClassifier(ClassifierMixin, BaseEstimator):
    """Feed-forward ReLU classifier trained with (margin-weighted) adversarial training.

    ``regime`` selects the objective: ``natural``, ``at``, ``combined``,
    ``trades``, ``weighted-at`` or ``weighted-trades``. The weighted regimes
    scale each adversarial loss by ``exp(-alpha_train * margin)``.

    Parameters mirror :class:`~marginrobust.training.TrainConfig` and
    :class:`~marginrobust.attack.AttackConfig`; ``random_state`` seeds the
    initialization, shuffling and attack noise.
    """

    def __init__(self, hidden_layer_sizes=(256, 128), regime="weighted-at", alpha_train=0.5,
                 epsilon=0.3, step_size=0.01, steps=10, init_noise_scale=0.001,
                 lr=0.1, batch_size=128, epochs=15, lambda_inv=6.0, combine_lambda=1.0,
                 random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.regime = regime
        self.alpha_train = alpha_train
        self.epsilon = epsilon
        self.step_size = step_size
        self.steps = steps
        self.init_noise_scale = init_noise_scale
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.lambda_inv = lambda_inv
        self.combine_lambda = combine_lambda
        self.random_state = random_state

    def _seed(self) -> int:
        if self.random_state is None:
            return 0
        if isinstance(self.random_state, (int, np.integer)):
            return int(self.random_state)
        raise ConfigurationError("random_state must be an int or None")

    def attack_config(self, **overrides) -> AttackConfig:
        kw = dict(epsilon=self.epsilon, step_size=self.step_size, steps=self.steps,
                  init_noise_scale=self.init_noise_scale, seed=self._seed())
        kw.update(overrides)
        return AttackConfig(**kw)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            regime=self.regime, epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            attack=self.attack_config(),
            alpha_train=self.alpha_train if self.regime.startswith("weighted") else None,
            lambda_inv=self.lambda_inv if self.regime.endswith("trades") else None,
            combine_lambda=self.combine_lambda if self.regime == "combined" else None,
            seed=self._seed(),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_unit_box(X)
        encoder = LabelEncoder().fit(y)
        if len(encoder.classes_) < 2:
            raise ValueError("need at least two classes")
        self._encoder = encoder
        self.classes_ = encoder.classes_
        self.n_features_in_ = X.shape[1]
        cfg = self._train_config()
        dims = [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]
        data = Dataset(X, self._encoder.transform(y), len(self.classes_), "fit")
        self.model_, self.train_log_ = train(init_mlp(dims, self._seed()), data, cfg)
        return self

    def _validated(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return check_unit_box(X)

    def decision_function(self, X):
        X = self._validated(X)
        return forward(self.model_, X)

    def predict_proba(self, X):
        return softmax_probs(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def perturb(self, X, y, flavor="ce", alpha=None):
        """Adversarial versions of ``X`` under the estimator's threat model."""
        X = self._validated(X)
        codes = self._encoder.transform(np.asarray(y))
        return attack_inputs(self.model_, X, codes, self.attack_config(flavor=flavor, alpha=alpha))

    def evaluate(self, X, y, alpha_eval=(0.5, 1.0, 1.5, 2.0)):
        """Natural, robust and importance-sampled accuracies; one report per ``alpha_eval``."""
        X = self._validated(X)
        data = Dataset(X, self._encoder.transform(np.asarray(y)), len(self.classes_), "evaluate")
        return evaluate_many(self.model_, data, self.attack_config(), list(alpha_eval))
