# model.py
"""
Multinomial logistic model over per-pixel features, with an EMA teacher copy
"""

from typing import Tuple

import numpy as np
from scipy.special import softmax


class LinearSoftmaxModel:
    """
    p(class | pixel) = softmax(x @ weight + bias).

    The shadow parameters (ema_weight, ema_bias) follow the student as
    ema <- m * ema + (1 - m) * param and serve as the teacher.
    """

    def __init__(self, feature_dim: int, num_classes: int):
        self.weight = np.zeros((feature_dim, num_classes))
        self.bias = np.zeros(num_classes)
        self.ema_weight = self.weight.copy()
        self.ema_bias = self.bias.copy()

    @property
    def num_classes(self) -> int:
        return self.bias.shape[0]

    def logits(self, features: np.ndarray, use_ema: bool = False) -> np.ndarray:
        weight, bias = (self.ema_weight, self.ema_bias) if use_ema else (self.weight, self.bias)
        return features @ weight + bias

    def predict_proba(self, features: np.ndarray, use_ema: bool = False) -> np.ndarray:
        """Class probabilities on the last axis."""
        return softmax(self.logits(features, use_ema), axis=-1)

    def predict(self, features: np.ndarray, use_ema: bool = False) -> np.ndarray:
        return self.logits(features, use_ema).argmax(axis=-1)

    def parameter_gradients(self, features: np.ndarray, grad_logits: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Chain rule through the linear layer: (n, d) features, (n, k) logit gradients."""
        return features.T @ grad_logits, grad_logits.sum(axis=0)

    def apply_gradients(self, grad_weight: np.ndarray, grad_bias: np.ndarray, lr: float):
        self.weight = self.weight - lr * grad_weight
        self.bias = self.bias - lr * grad_bias

    def update_ema(self, momentum: float):
        self.ema_weight = momentum * self.ema_weight + (1.0 - momentum) * self.weight
        self.ema_bias = momentum * self.ema_bias + (1.0 - momentum) * self.bias

    def copy(self) -> "LinearSoftmaxModel":
        clone = LinearSoftmaxModel(*self.weight.shape)
        clone.weight = self.weight.copy()
        clone.bias = self.bias.copy()
        clone.ema_weight = self.ema_weight.copy()
        clone.ema_bias = self.ema_bias.copy()
        return clone

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.weight, self.bias, self.ema_weight, self.ema_bias))
