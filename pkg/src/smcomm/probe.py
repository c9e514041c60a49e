"""Fixed-seed linear classifier used to score reconstructions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import DenseNet, backward, forward, sgd_step


@dataclass(frozen=True, eq=False)
class LinearProbe:
    net: DenseNet
    n_classes: int

    def predict(self, x) -> np.ndarray:
        return np.argmax(forward(self.net, np.atleast_2d(x))[-1], axis=1)

    def accuracy(self, x, labels) -> float:
        labels = np.asarray(labels)
        if len(labels) == 0:
            return 0.0
        return float(np.mean(self.predict(x) == labels))


def fit_probe(x, labels, n_classes: int | None = None, steps: int = 400,
              lr: float = 1.0, seed: int = 0) -> LinearProbe:
    """Softmax regression by full-batch gradient descent."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    net = DenseNet.init([x.shape[1], n_classes], ["softmax"], seed)
    onehot = np.eye(n_classes)[labels]
    for step in range(steps):
        _, grads = backward(net, forward(net, x), "cross_entropy", onehot)
        net = sgd_step(net, grads, lr, step)
    return LinearProbe(net, n_classes)
