"""Toy differentiable models for the training simulator.

Three models with analytic gradients and deliberately different
gradient statistics:

* ``QuadraticModel``: mean squared distance to noisy per-sample
  targets. Its optimum is the target mean, known in closed form.
* ``LogisticBlobs``: ridge-regularized logistic regression on two
  Gaussian blobs. The small ridge term keeps the optimum finite even
  when the sample happens to be linearly separable.
* ``TanhRegressor``: one hidden tanh layer fit to a smooth nonlinear
  target; its gradient mixes scales across layers.

All parameters and arithmetic are float64; the 32-bit cast happens only
when a gradient enters the quantization pipeline.
"""

from __future__ import annotations

import numpy as np

__all__ = ["QuadraticModel", "LogisticBlobs", "TanhRegressor", "make_model"]


class QuadraticModel:
    def __init__(self, dim: int = 8, n_samples: int = 256, noise: float = 0.1,
                 seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        base = rng.uniform(-1.0, 1.0, dim)
        self.targets = base + noise * rng.standard_normal((n_samples, dim))
        self.optimum = self.targets.mean(axis=0)
        self.n_samples = n_samples
        self.dim = dim

    def init_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, x: np.ndarray) -> float:
        diff = x[None, :] - self.targets
        return float(np.mean(np.sum(diff * diff, axis=1)))

    def minibatch_grad(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        return 2.0 * (x - self.targets[idx].mean(axis=0))


class LogisticBlobs:
    def __init__(self, features: int = 10, n_samples: int = 256,
                 separation: float = 2.0, ridge: float = 1e-3,
                 seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        direction = rng.standard_normal(features)
        mu = separation * direction / np.linalg.norm(direction)
        self.y = np.where(rng.random(n_samples) < 0.5, -1.0, 1.0)
        points = self.y[:, None] * mu[None, :] + rng.standard_normal(
            (n_samples, features)
        )
        self.design = np.hstack([points, np.ones((n_samples, 1))])
        self.ridge = ridge
        self.n_samples = n_samples
        self.dim = features + 1

    def init_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, w: np.ndarray) -> float:
        margins = self.y * (self.design @ w)
        data = float(np.mean(np.logaddexp(0.0, -margins)))
        return data + 0.5 * self.ridge * float(w @ w)

    def minibatch_grad(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        X = self.design[idx]
        y = self.y[idx]
        weights = -y / (1.0 + np.exp(y * (X @ w)))
        return X.T @ weights / len(idx) + self.ridge * w

    def accuracy(self, w: np.ndarray) -> float:
        return float(np.mean(np.sign(self.design @ w) == self.y))


class TanhRegressor:
    def __init__(self, features: int = 4, hidden: int = 32,
                 n_samples: int = 512, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        self.X = rng.uniform(-2.0, 2.0, (n_samples, features))
        a = rng.standard_normal(features)
        b = rng.standard_normal(features)
        self.y = np.sin(self.X @ a) + 0.5 * np.cos(self.X @ b)
        self.features = features
        self.hidden = hidden
        self.n_samples = n_samples
        self.dim = hidden * features + hidden + hidden + 1
        self._init = 0.5 * rng.standard_normal(self.dim)

    def init_params(self) -> np.ndarray:
        return self._init.copy()

    def _unpack(self, theta: np.ndarray):
        f, h = self.features, self.hidden
        W1 = theta[: h * f].reshape(h, f)
        b1 = theta[h * f : h * f + h]
        w2 = theta[h * f + h : h * f + 2 * h]
        b2 = theta[-1]
        return W1, b1, w2, b2

    def loss(self, theta: np.ndarray) -> float:
        W1, b1, w2, b2 = self._unpack(theta)
        hidden = np.tanh(self.X @ W1.T + b1)
        pred = hidden @ w2 + b2
        return float(0.5 * np.mean((pred - self.y) ** 2))

    def minibatch_grad(self, theta: np.ndarray, idx: np.ndarray) -> np.ndarray:
        W1, b1, w2, b2 = self._unpack(theta)
        X, y = self.X[idx], self.y[idx]
        hidden = np.tanh(X @ W1.T + b1)
        pred = hidden @ w2 + b2
        dpred = (pred - y) / len(idx)
        dw2 = hidden.T @ dpred
        db2 = dpred.sum()
        dhidden = dpred[:, None] * w2[None, :] * (1.0 - hidden * hidden)
        dW1 = dhidden.T @ X
        db1 = dhidden.sum(axis=0)
        return np.concatenate([dW1.reshape(-1), db1, dw2, [db2]])


def make_model(name: str, *, dim: int, n_samples: int, noise: float,
               separation: float, seed: int):
    if name == "quadratic":
        return QuadraticModel(dim=dim, n_samples=n_samples, noise=noise, seed=seed)
    if name == "logistic":
        return LogisticBlobs(features=dim, n_samples=n_samples,
                             separation=separation, seed=seed)
    if name == "mlp":
        return TanhRegressor(features=dim, n_samples=n_samples, seed=seed)
    raise ValueError(f"unknown model {name!r} (quadratic, logistic, mlp)")
