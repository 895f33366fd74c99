"""Feature attribution: exact additive attributions for linear models and
permutation importance for everything else.

For a linear model the Shapley value of feature j at input x has the closed
form w_j * (x_j - background_j), which satisfies local accuracy exactly:
base value plus attributions reconstructs the prediction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import FEATURE_NAMES, TaskId
from .sparse_linear import GroupLassoModel, LassoModel


@dataclass
class Attribution:
    model_kind: str
    task: TaskId | None
    per_feature: dict[str, float]
    base_value: float
    method: str  # "linear-shap" or "permutation"


def _linear_parts(
    model: LassoModel | GroupLassoModel, task: TaskId | None
) -> tuple[np.ndarray, float, str]:
    if isinstance(model, LassoModel):
        return model.weights, model.intercept, "lasso"
    if task is None:
        raise ValueError("a task is required for group-lasso attributions")
    if task not in model.tasks:
        raise ValueError(f"unknown task {task!r}")
    t = model.tasks.index(task)
    return model.weights[:, t], float(model.intercepts[t]), "group-lasso"


def linear_shap(
    model: LassoModel | GroupLassoModel,
    x: np.ndarray,
    background_mean: np.ndarray,
    task: TaskId | None = None,
    feature_names: Sequence[str] = FEATURE_NAMES,
) -> Attribution:
    """Exact additive attribution of one prediction against a background mean."""
    weights, intercept, kind = _linear_parts(model, task)
    x = np.asarray(x, dtype=float)
    background_mean = np.asarray(background_mean, dtype=float)
    if x.shape != weights.shape or background_mean.shape != weights.shape:
        raise ValueError("dimension mismatch")
    if len(feature_names) != len(weights):
        raise ValueError("feature name list does not match the weight vector")
    phi = weights * (x - background_mean)
    base = float(weights @ background_mean + intercept)
    return Attribution(
        model_kind=kind,
        task=task,
        per_feature={name: float(v) for name, v in zip(feature_names, phi)},
        base_value=base,
        method="linear-shap",
    )


def mean_abs_shap(
    model: LassoModel | GroupLassoModel,
    task: TaskId | None,
    rows: np.ndarray,
    background_mean: np.ndarray,
    feature_names: Sequence[str] = FEATURE_NAMES,
) -> dict[str, float]:
    """Mean |attribution| per feature over a set of rows."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[0] < 1:
        raise ValueError("need at least one row")
    weights, _, _ = _linear_parts(model, task)
    phi = np.abs(rows - background_mean) * np.abs(weights)
    means = phi.mean(axis=0)
    return {name: float(v) for name, v in zip(feature_names, means)}


def permutation_importance(
    predict: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    repeats: int = 10,
    seed: int = 0,
) -> np.ndarray:
    """Increase in MAE when each feature column is shuffled, averaged over repeats.

    Repeat r draws its permutations from a generator seeded with ``seed + r``,
    so an n-repeat run equals the mean of n single-repeat runs with
    consecutive seeds.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    base_mae = float(np.mean(np.abs(predict(x) - y)))
    importances = np.zeros(x.shape[1])
    for r in range(repeats):
        rng = np.random.default_rng(seed + r)
        for j in range(x.shape[1]):
            perm = rng.permutation(x.shape[0])
            shuffled = x.copy()
            shuffled[:, j] = x[perm, j]
            mae = float(np.mean(np.abs(predict(shuffled) - y)))
            importances[j] += mae - base_mae
    return importances / repeats


def write_attribution_csv(
    rows: Sequence[tuple[str, TaskId, str, float, str]], path: str | Path
) -> None:
    """Flat CSV ``model,task,feature,value,method``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "task", "feature", "value", "method"])
        for model_kind, task, feature, value, method in rows:
            writer.writerow([model_kind, task, feature, repr(float(value)), method])
