"""First-order MAML for regression: learn a network initialization that
adapts to a new task in a few gradient steps.

Each meta-epoch splits every helper task into support/query halves (seeded by
the epoch index), adapts a copy of the shared initialization on the support
half, and accumulates the query-loss gradient evaluated at the adapted
parameters. The outer update applies the task-averaged gradient to the
initialization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import TaskId
from .numerics import MlpParams, init_mlp, mlp_backward, mlp_forward


@dataclass(frozen=True)
class MamlConfig:
    inner_steps: int = 5
    inner_lr: float = 0.01
    outer_lr: float = 0.001
    meta_epochs: int = 500
    net_shape: tuple[int, ...] = (9, 50, 10, 1)
    first_order: bool = True

    def __post_init__(self):
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.inner_lr < 0 or self.outer_lr <= 0:
            raise ValueError("learning rates must be positive (inner_lr may be 0)")
        if self.meta_epochs < 1:
            raise ValueError("meta_epochs must be >= 1")
        if len(self.net_shape) < 2 or self.net_shape[-1] != 1:
            raise ValueError("net_shape must end in a single output unit")
        if not self.first_order:
            raise ValueError("second-order MAML is not supported")


def mse_and_grads(
    params: MlpParams, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean squared error and its exact parameter gradients."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    preds = mlp_forward(params, x)[:, 0]
    err = preds - y
    loss = float(np.mean(err**2))
    upstream = (2.0 / len(y)) * err[:, None]
    w_grads, b_grads, _ = mlp_backward(params, x, upstream)
    return loss, w_grads, b_grads


def adapt(
    theta: MlpParams, support_x: np.ndarray, support_y: np.ndarray, cfg: MamlConfig
) -> MlpParams:
    """K full-batch gradient steps on the support MSE; ``theta`` is not mutated."""
    support_x = np.atleast_2d(np.asarray(support_x, dtype=float))
    support_y = np.asarray(support_y, dtype=float)
    if len(support_y) == 0:
        raise ValueError("empty support set")
    params = theta.copy()
    for _ in range(cfg.inner_steps):
        _, w_grads, b_grads = mse_and_grads(params, support_x, support_y)
        for w, gw in zip(params.weights, w_grads):
            w -= cfg.inner_lr * gw
        for b, gb in zip(params.biases, b_grads):
            b -= cfg.inner_lr * gb
    return params


def meta_train(
    helper_tasks: Mapping[TaskId, tuple[np.ndarray, np.ndarray]],
    cfg: MamlConfig,
    seed: int = 0,
) -> MlpParams:
    """Learn the shared initialization from the helper tasks.

    First-order approximation: the query gradient is taken with respect to the
    adapted parameters and applied to the initialization directly.
    """
    if not helper_tasks:
        raise ValueError("need at least one helper task")
    tasks = sorted(helper_tasks)
    data = {}
    for task in tasks:
        x, y = helper_tasks[task]
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float)
        if len(y) < 2:
            raise ValueError(f"task {task!r} too small to split into support/query")
        if x.shape[1] != cfg.net_shape[0]:
            raise ValueError("feature width does not match the network input size")
        data[task] = (x, y)

    theta = init_mlp(cfg.net_shape, seed)
    for epoch in range(cfg.meta_epochs):
        rng = np.random.default_rng([seed, epoch])
        w_accum = [np.zeros_like(w) for w in theta.weights]
        b_accum = [np.zeros_like(b) for b in theta.biases]
        for task in tasks:
            x, y = data[task]
            perm = rng.permutation(len(y))
            half = len(y) // 2
            sup, qry = perm[:half], perm[half:]
            adapted = adapt(theta, x[sup], y[sup], cfg)
            _, w_grads, b_grads = mse_and_grads(adapted, x[qry], y[qry])
            for acc, g in zip(w_accum, w_grads):
                acc += g
            for acc, g in zip(b_accum, b_grads):
                acc += g
        scale = cfg.outer_lr / len(tasks)
        for w, acc in zip(theta.weights, w_accum):
            w -= scale * acc
        for b, acc in zip(theta.biases, b_accum):
            b -= scale * acc
    return theta


def predict_net(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Scalar regression outputs for a batch of inputs."""
    return mlp_forward(params, np.atleast_2d(np.asarray(x, dtype=float)))[:, 0]
