"""Logistic / ridge regression fitted by monotone gradient descent on standardized inputs."""
from __future__ import annotations

import numpy as np

from .base import LearnerTask, TrainingError

TOL = 1e-6
MAX_ITER = 5000


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float, task: LearnerTask):
    """Mean loss + lam/2 * ||w||^2 and its gradient; theta[0] is the unpenalized intercept."""
    b, w = theta[0], theta[1:]
    z = b + X @ w
    n = len(y)
    if task is LearnerTask.CLASSIFICATION:
        # log(1 + e^z) - y z, computed stably
        loss = np.mean(np.logaddexp(0.0, z) - y * z)
        resid = sigmoid(z) - y
    else:
        resid = z - y
        loss = 0.5 * np.mean(resid ** 2)
    f = loss + 0.5 * lam * float(w @ w)
    grad = np.empty_like(theta)
    grad[0] = resid.sum() / n
    grad[1:] = X.T @ resid / n + lam * w
    return float(f), grad


def _project(theta: np.ndarray, non_negative: bool) -> np.ndarray:
    if non_negative:
        theta = theta.copy()
        theta[1:] = np.maximum(theta[1:], 0.0)
    return theta


def minimize(X, y, lam, task, non_negative=False, tol=TOL, max_iter=MAX_ITER):
    """Projected gradient descent with Armijo backtracking; every accepted step lowers the objective."""
    theta = np.zeros(X.shape[1] + 1)
    if task is LearnerTask.CLASSIFICATION:
        p = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        theta[0] = np.log(p / (1 - p))
    else:
        theta[0] = y.mean()
    f, g = objective(theta, X, y, lam, task)
    history = [f]
    step = 1.0
    for _ in range(max_iter):
        while True:
            cand = _project(theta - step * g, non_negative)
            fc, gc = objective(cand, X, y, lam, task)
            if not np.isfinite(fc):
                raise TrainingError(f"GLM objective became non-finite (step={step:g}, last={f:g})")
            moved = cand - theta
            if fc <= f - 0.5 / step * float(moved @ moved) or step < 1e-12:
                break
            step *= 0.5
        if step < 1e-12:
            break
        theta, f, g = cand, fc, gc
        history.append(f)
        gmap = float(np.linalg.norm(moved)) / step
        if gmap < tol:
            break
        step = min(step * 2.0, 1e3)
    return theta, history


def fit(X, y, task: LearnerTask, hp: dict, seed: int) -> dict:
    lam = float(hp.get("lambda", 0.01))
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Xs = (X - mean) / std
    theta, history = minimize(Xs, y.astype(float), lam, task, non_negative=bool(hp.get("non_negative", False)))
    return {"mean": mean, "std": std, "theta": theta, "objective_history": np.asarray(history)}


def decision(state: dict, X: np.ndarray) -> np.ndarray:
    Xs = (X - state["mean"]) / state["std"]
    theta = state["theta"]
    return theta[0] + Xs @ theta[1:]


def predict(state: dict, X: np.ndarray, task: LearnerTask) -> np.ndarray:
    z = decision(state, X)
    return sigmoid(z) if task is LearnerTask.CLASSIFICATION else z
