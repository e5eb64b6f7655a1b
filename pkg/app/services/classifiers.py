import logging

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from ..models.downstream import PcaTransform
from ..utils.errors import DimensionError, FitError

logger = logging.getLogger(__name__)

POWER_TOLERANCE = 1e-10
POWER_MAX_ITER = 2000
_QUERY_CHUNK = 1024


def _matrix(rows, name: str) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {rows.shape}")
    return rows


def knn_classify(train_reps, train_labels, query_reps, k: int = 5) -> np.ndarray:
    """
    Majority vote among the k Euclidean-nearest training rows. Distance ties go to the lower
    training index, vote ties to the smallest class id.
    """
    train = _matrix(train_reps, "Training representations")
    query = _matrix(query_reps, "Query representations")
    labels = np.asarray(train_labels)
    if train.shape[0] == 0:
        raise FitError("KNN needs a non-empty training set")
    if not 1 <= k <= train.shape[0]:
        raise FitError(f"k must lie in [1, {train.shape[0]}], got {k}")
    if train.shape[1] != query.shape[1]:
        raise DimensionError(f"Query width {query.shape[1]} != training width {train.shape[1]}")

    classes, encoded = np.unique(labels, return_inverse=True)
    predicted = np.empty(query.shape[0], dtype=classes.dtype)
    for start in range(0, query.shape[0], _QUERY_CHUNK):
        block = query[start:start + _QUERY_CHUNK]
        distances = cdist(block, train, metric="sqeuclidean")
        nearest = np.argsort(distances, axis=1, kind="stable")[:, :k]
        votes = np.zeros((block.shape[0], classes.size), dtype=np.int64)
        np.add.at(votes, (np.repeat(np.arange(block.shape[0]), k), encoded[nearest].ravel()), 1)
        predicted[start:start + block.shape[0]] = classes[np.argmax(votes, axis=1)]
    return predicted


def lda_fit_predict(train_reps, train_labels, query_reps) -> np.ndarray:
    """Shared-covariance Gaussian discriminant with a small ridge on the pooled covariance."""
    train = _matrix(train_reps, "Training representations")
    query = _matrix(query_reps, "Query representations")
    labels = np.asarray(train_labels)
    classes, encoded, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if classes.size == 0:
        raise FitError("LDA needs a non-empty training set")
    small = classes[counts < 2]
    if small.size:
        raise FitError(f"LDA needs at least two members per class; too few for {small.tolist()}")
    n, p = train.shape
    if n <= classes.size:
        raise FitError(f"LDA needs more rows ({n}) than classes ({classes.size})")

    means = np.vstack([train[encoded == c].mean(axis=0) for c in range(classes.size)])
    centered = train - means[encoded]
    pooled = centered.T @ centered / (n - classes.size)
    ridge = 1e-6 * float(np.mean(np.diag(pooled)))
    pooled = pooled + max(ridge, 1e-12) * np.eye(p)

    factor = cho_factor(pooled)
    weights = cho_solve(factor, means.T)  # (p, C)
    offsets = -0.5 * np.sum(means.T * weights, axis=0) + np.log(counts / n)
    scores = query @ weights + offsets
    return classes[np.argmax(scores, axis=1)]


def _orthogonalize(v: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    for u in basis:
        v = v - (u @ v) * u
    return v


def _start_vector(p: int, basis: list[np.ndarray]) -> np.ndarray:
    candidates = [np.full(p, 1.0 / np.sqrt(p))] + list(np.eye(p))
    for candidate in candidates:
        v = _orthogonalize(candidate, basis)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm
    raise FitError("No start vector outside the span of earlier components")


def pca_fit(rows, k: int, tolerance: float = POWER_TOLERANCE, max_iter: int = POWER_MAX_ITER) -> PcaTransform:
    """Top-k covariance eigenvectors by power iteration with deflation."""
    data = _matrix(rows, "PCA input")
    n, p = data.shape
    if k < 1 or k > p:
        raise DimensionError(f"k must lie in [1, {p}], got {k}")
    means = data.mean(axis=0)
    centered = data - means
    rank = int(np.linalg.matrix_rank(centered)) if n > 1 else 0
    if k > rank:
        raise FitError(f"Requested {k} components but the centered data has rank {rank}")

    covariance = centered.T @ centered / max(n - 1, 1)
    total = float(np.trace(covariance))
    working = covariance.copy()
    components, eigenvalues = [], []
    for i in range(k):
        v = _start_vector(p, components)
        converged = False
        for _ in range(max_iter):
            w = _orthogonalize(working @ v, components)
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            w = w / norm
            if np.linalg.norm(w - v) < tolerance:
                v = w
                converged = True
                break
            v = w
        if not converged:
            logger.warning(f"Power iteration for component {i} stopped after {max_iter} iterations")
        value = float(v @ covariance @ v)
        working = working - value * np.outer(v, v)
        components.append(v)
        eigenvalues.append(value)

    eigenvalues = np.asarray(eigenvalues)
    return PcaTransform(
        means=means,
        components=np.vstack(components),
        explained_variance=eigenvalues,
        explained_share=eigenvalues / total if total > 0 else np.zeros(k),
    )


def pca_apply(transform: PcaTransform, rows) -> np.ndarray:
    data = _matrix(rows, "PCA rows")
    if data.shape[1] != transform.means.shape[0]:
        raise DimensionError(f"Rows have {data.shape[1]} columns, transform expects {transform.means.shape[0]}")
    return (data - transform.means) @ transform.components.T


def confusion_matrix(true_labels, predicted_labels, n_classes: int) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (true_labels, predicted_labels), 1)
    return matrix


def f1_from_confusion(matrix: np.ndarray) -> tuple[float, list[float | None]]:
    """
    Weighted F1 and per-class F1. Classes without support are undefined (None) and
    carry no weight; a zero denominator gives F1 = 0.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    support = matrix.sum(axis=1)
    tp = np.diag(matrix)
    fp = matrix.sum(axis=0) - tp
    fn = support - tp
    per_class = []
    weighted = 0.0
    total = support.sum()
    for c in range(matrix.shape[0]):
        if support[c] == 0:
            per_class.append(None)
            continue
        denominator = 2 * tp[c] + fp[c] + fn[c]
        score = 2 * tp[c] / denominator if denominator > 0 else 0.0
        per_class.append(float(score))
        weighted += support[c] / total * score
    return float(min(weighted, 1.0)), per_class
