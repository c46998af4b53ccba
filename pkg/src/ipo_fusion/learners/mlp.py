"""Feed-forward ReLU network trained with mini-batch Adam; backpropagation written out by hand."""
from __future__ import annotations

import numpy as np

from .base import LearnerTask, TrainingError
from .glm import sigmoid


def init_params(sizes: list[int], rng: np.random.Generator) -> list[np.ndarray]:
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        params.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def forward(params, X):
    """Returns the output pre-activation and the per-layer activations needed for backprop."""
    acts = [X]
    pre = []
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        pre.append(z)
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    return acts[-1][:, 0], acts, pre


def loss_and_grads(params, X, y, task: LearnerTask, l2: float = 0.0):
    """Mean loss (+ l2/2 * sum of squared weights) and its exact gradient w.r.t. every parameter."""
    out, acts, pre = forward(params, X)
    n = len(y)
    if task is LearnerTask.CLASSIFICATION:
        loss = np.mean(np.logaddexp(0.0, out) - y * out)
        delta = (sigmoid(out) - y) / n
    else:
        loss = 0.5 * np.mean((out - y) ** 2)
        delta = (out - y) / n
    n_layers = len(params) // 2
    loss += 0.5 * l2 * sum(float(np.sum(params[2 * i] ** 2)) for i in range(n_layers))
    grads = [None] * len(params)
    d = delta[:, None]
    for i in reversed(range(n_layers)):
        grads[2 * i] = acts[i].T @ d + l2 * params[2 * i]
        grads[2 * i + 1] = d.sum(axis=0)
        if i > 0:
            d = (d @ params[2 * i].T) * (pre[i - 1] > 0)
    return float(loss), grads


def _hidden(hp: dict) -> tuple[int, ...]:
    hidden = tuple(int(h) for h in hp.get("hidden", (64, 32)))
    if not hidden or any(h < 1 for h in hidden):
        raise ValueError(f"hidden layer sizes must be positive, got {hidden}")
    return hidden


def fit(X, y, task: LearnerTask, hp: dict, seed: int) -> dict:
    hidden = _hidden(hp)
    epochs = int(hp.get("epochs", 200))
    lr = float(hp.get("learning_rate", 1e-3))
    batch = int(hp.get("batch_size", 32))
    l2 = float(hp.get("l2", 1e-4))
    rng = np.random.default_rng(seed)

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Xs = (X - mean) / std
    y = y.astype(float)
    if task is LearnerTask.REGRESSION:
        y_mean, y_std = float(y.mean()), float(y.std()) or 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    yt = (y - y_mean) / y_std

    params = init_params([X.shape[1], *hidden, 1], rng)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0
    n = len(yt)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = loss_and_grads(params, Xs[idx], yt[idx], task, l2)
            if not np.isfinite(loss):
                raise TrainingError(f"MLP loss diverged at step {t} (lr={lr:g})")
            epoch_loss += loss * len(idx)
            t += 1
            for i, g in enumerate(grads):
                m[i] = beta1 * m[i] + (1 - beta1) * g
                v[i] = beta2 * v[i] + (1 - beta2) * g * g
                params[i] = params[i] - lr * (m[i] / (1 - beta1 ** t)) / (np.sqrt(v[i] / (1 - beta2 ** t)) + eps)
        history.append(epoch_loss / n)
    return {"mean": mean, "std": std, "params": params, "y_mean": y_mean, "y_std": y_std,
            "train_loss": np.asarray(history)}


def predict(state: dict, X: np.ndarray, task: LearnerTask) -> np.ndarray:
    params = [np.asarray(p, dtype=float) for p in state["params"]]
    out, _, _ = forward(params, (X - state["mean"]) / state["std"])
    if task is LearnerTask.CLASSIFICATION:
        return sigmoid(out)
    return out * state["y_std"] + state["y_mean"]
