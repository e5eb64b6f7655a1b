"""Gradient-boosted regression trees with exact greedy variance-reduction splits."""
import logging

import numpy as np

from ..models.downstream import GbtModel, RegressionTree
from ..schemas.config_schemas import GbtParams
from ..utils.errors import DimensionError, FitError, NumericError

logger = logging.getLogger(__name__)

MIN_ROWS = 10


def _best_split(x, residual, members, orders):
    """
    Highest squared-error reduction over every feature and every boundary between distinct
    sorted values. Ties keep the first feature, then the first threshold.
    """
    n = int(members.sum())
    total = residual[members].sum()
    sizes = np.arange(1, n, dtype=np.float64)
    best_gain, best = 0.0, None
    for f, order in enumerate(orders):
        rows = order[members[order]]
        values = x[rows, f]
        distinct = values[1:] > values[:-1]
        if not distinct.any():
            continue
        left_sums = np.cumsum(residual[rows])[:-1]
        gain = left_sums**2 / sizes + (total - left_sums) ** 2 / (n - sizes) - total**2 / n
        gain = np.where(distinct, gain, -np.inf)
        position = int(np.argmax(gain))
        if gain[position] > best_gain:
            best_gain = float(gain[position])
            best = (f, float(values[position]))
    return best, best_gain


def _grow(tree, x, residual, members, orders, depth, max_depth, min_gain) -> int:
    node = tree.add_node(value=float(residual[members].mean()))
    if depth >= max_depth or members.sum() < 2:
        return node
    split, gain = _best_split(x, residual, members, orders)
    if split is None or gain <= min_gain:
        return node
    feature, threshold = split
    goes_left = x[:, feature] <= threshold
    tree.feature[node] = feature
    tree.threshold[node] = threshold
    tree.left[node] = _grow(tree, x, residual, members & goes_left, orders, depth + 1, max_depth, min_gain)
    tree.right[node] = _grow(tree, x, residual, members & ~goes_left, orders, depth + 1, max_depth, min_gain)
    return node


def fit_tree(x: np.ndarray, residual: np.ndarray, max_depth: int, orders=None) -> RegressionTree:
    """Depth-limited least-squares regression tree; leaves hold residual means."""
    if orders is None:
        orders = [np.argsort(x[:, f], kind="stable") for f in range(x.shape[1])]
    # gains below rounding noise of the residual energy are treated as no gain
    min_gain = 1e-12 * max(1.0, float(residual @ residual))
    tree = RegressionTree()
    _grow(tree, x, residual, np.ones(x.shape[0], dtype=bool), orders, 0, max_depth, min_gain)
    return tree


def _check_rows(rows, name: str) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {rows.shape}")
    if not np.all(np.isfinite(rows)):
        raise NumericError(f"{name} contains NaN or infinite entries")
    return rows


def gbt_fit(features, targets, params: GbtParams = GbtParams()) -> GbtModel:
    x = _check_rows(features, "Features")
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise DimensionError(f"Targets of shape {y.shape} do not match {x.shape[0]} feature rows")
    if not np.all(np.isfinite(y)):
        raise NumericError("Targets contain NaN or infinite entries")
    if x.shape[0] < MIN_ROWS:
        raise FitError(f"Boosting needs at least {MIN_ROWS} rows, got {x.shape[0]}")

    base = float(y.mean())
    if np.all(y == y[0]):
        logger.info("Constant target; boosting returns the mean without trees")
        return GbtModel([], params.learning_rate, float(y[0]))

    orders = [np.argsort(x[:, f], kind="stable") for f in range(x.shape[1])]
    prediction = np.full(y.shape[0], base)
    trees = []
    for _ in range(params.rounds):
        tree = fit_tree(x, y - prediction, params.depth, orders)
        prediction = prediction + params.learning_rate * tree.predict(x)
        trees.append(tree)
    return GbtModel(trees, params.learning_rate, base)


def gbt_predict(model: GbtModel, rows) -> np.ndarray:
    x = _check_rows(rows, "Rows")
    out = np.full(x.shape[0], model.base)
    for tree in model.trees:
        out = out + model.learning_rate * tree.predict(x)
    return out


def staged_training_mse(model: GbtModel, features, targets) -> list[float]:
    """Training MSE after the base prediction and after each boosting round."""
    x = _check_rows(features, "Features")
    y = np.asarray(targets, dtype=np.float64)
    prediction = np.full(x.shape[0], model.base)
    history = [float(np.mean((y - prediction) ** 2))]
    for tree in model.trees:
        prediction = prediction + model.learning_rate * tree.predict(x)
        history.append(float(np.mean((y - prediction) ** 2)))
    return history
