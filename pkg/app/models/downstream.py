from dataclasses import dataclass, field

import numpy as np

LEAF = -1


@dataclass
class PcaTransform:
    means: np.ndarray  # (p,)
    components: np.ndarray  # (k, p), orthonormal rows
    explained_variance: np.ndarray  # (k,) eigenvalues
    explained_share: np.ndarray  # (k,) eigenvalue over total variance

    @property
    def k(self) -> int:
        return int(self.components.shape[0])

    def __repr__(self):
        return f"<PcaTransform(k={self.k}, p={self.means.shape[0]})>"


@dataclass
class RegressionTree:
    """
    Flat node arrays. Internal nodes send x[feature] <= threshold to `left`;
    leaves have feature == LEAF and carry `value`.
    """

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_node(self, feature: int = LEAF, threshold: float = 0.0, value: float = 0.0) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        return len(self.feature) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f == LEAF)

    def predict(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        out = np.empty(rows.shape[0])
        node = np.zeros(rows.shape[0], dtype=np.int64)
        active = np.ones(rows.shape[0], dtype=bool)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        value = np.asarray(self.value)
        while active.any():
            current = node[active]
            at_leaf = feature[current] == LEAF
            positions = np.flatnonzero(active)
            done = positions[at_leaf]
            out[done] = value[node[done]]
            active[done] = False
            moving = positions[~at_leaf]
            if moving.size == 0:
                break
            here = node[moving]
            goes_left = rows[moving, feature[here]] <= threshold[here]
            node[moving] = np.where(goes_left, left[here], right[here])
        return out

    def __repr__(self):
        return f"<RegressionTree(nodes={self.n_nodes}, leaves={self.n_leaves})>"


@dataclass
class GbtModel:
    trees: list[RegressionTree]
    learning_rate: float
    base: float

    def __repr__(self):
        return f"<GbtModel(trees={len(self.trees)}, lr={self.learning_rate}, base={self.base:.6g})>"
