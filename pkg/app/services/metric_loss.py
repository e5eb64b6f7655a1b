from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..utils.errors import DimensionError


class LossKind(str, Enum):
    PROPOSED = "proposed"
    TRIPLET = "triplet"
    SWAP = "swap"


@dataclass
class TripletBatch:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=np.float64))
        self.positives = np.atleast_2d(np.asarray(self.positives, dtype=np.float64))
        self.negatives = np.atleast_2d(np.asarray(self.negatives, dtype=np.float64))
        if not (self.anchors.shape == self.positives.shape == self.negatives.shape):
            raise DimensionError(
                f"Triplet roles differ in shape: {self.anchors.shape}, "
                f"{self.positives.shape}, {self.negatives.shape}"
            )

    @classmethod
    def from_stacked(cls, embeddings: np.ndarray) -> "TripletBatch":
        """Splits a (3b, d) matrix laid out as [anchors; positives; negatives]."""
        b = embeddings.shape[0] // 3
        if 3 * b != embeddings.shape[0]:
            raise DimensionError(f"Stacked triplet matrix has {embeddings.shape[0]} rows")
        return cls(embeddings[:b], embeddings[b:2 * b], embeddings[2 * b:])

    @property
    def size(self) -> int:
        return self.anchors.shape[0]

    def distances(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(delta_plus, delta_minus, rho) per triplet."""
        delta_plus = np.linalg.norm(self.anchors - self.positives, axis=1)
        delta_minus = np.linalg.norm(self.anchors - self.negatives, axis=1)
        rho = np.linalg.norm(self.positives - self.negatives, axis=1)
        return delta_plus, delta_minus, rho


@dataclass
class LossReport:
    total: float
    hinge: float
    regularization: float
    delta_plus: np.ndarray
    delta_minus: np.ndarray
    rho: np.ndarray
    margin: float

    def __repr__(self):
        return (
            f"<LossReport(total={self.total:.6g}, hinge={self.hinge:.6g}, "
            f"reg={self.regularization:.6g}, n={len(self.delta_plus)})>"
        )


def euclidean_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"Vectors differ in length: {u.shape} vs {v.shape}")
    return float(np.sqrt(np.sum((u - v) ** 2)))


def _check_margin(eps0: float):
    if not eps0 > 0:
        raise ValueError(f"Margin must be positive, got {eps0}")


def _report(hinge: np.ndarray, reg: np.ndarray, distances, eps0: float) -> LossReport:
    delta_plus, delta_minus, rho = distances
    hinge_mean = float(np.mean(hinge)) if hinge.size else 0.0
    reg_mean = float(np.mean(reg)) if reg.size else 0.0
    return LossReport(
        total=hinge_mean + reg_mean,
        hinge=hinge_mean,
        regularization=reg_mean,
        delta_plus=delta_plus,
        delta_minus=delta_minus,
        rho=rho,
        margin=eps0,
    )


def triplet_loss(batch: TripletBatch, eps0: float = 1.0) -> LossReport:
    _check_margin(eps0)
    distances = batch.distances()
    delta_plus, delta_minus, _ = distances
    hinge = np.maximum(delta_plus - delta_minus + eps0, 0.0)
    return _report(hinge, np.zeros_like(hinge), distances, eps0)


def proposed_loss(batch: TripletBatch, eps0: float = 1.0) -> LossReport:
    """Hinge term plus the squared gap between positive-negative and anchor-negative distances."""
    _check_margin(eps0)
    distances = batch.distances()
    delta_plus, delta_minus, rho = distances
    hinge = np.maximum(delta_plus - delta_minus + eps0, 0.0)
    reg = (rho - delta_minus) ** 2
    return _report(hinge, reg, distances, eps0)


def swap_triplet_loss(batch: TripletBatch, eps0: float = 1.0) -> LossReport:
    _check_margin(eps0)
    distances = batch.distances()
    delta_plus, delta_minus, rho = distances
    hinge = np.maximum(delta_plus - np.minimum(delta_minus, rho) + eps0, 0.0)
    return _report(hinge, np.zeros_like(hinge), distances, eps0)


LOSS_FUNCTIONS = {
    LossKind.PROPOSED: proposed_loss,
    LossKind.TRIPLET: triplet_loss,
    LossKind.SWAP: swap_triplet_loss,
}


def compute_loss(batch: TripletBatch, eps0: float, which: LossKind | str) -> LossReport:
    return LOSS_FUNCTIONS[LossKind(which)](batch, eps0)


def _unit(diff: np.ndarray, norm: np.ndarray) -> np.ndarray:
    # coincident points contribute a zero gradient
    safe = np.where(norm > 0, norm, 1.0)
    return np.where((norm > 0)[:, None], diff / safe[:, None], 0.0)


def loss_gradients(
    batch: TripletBatch, eps0: float, which: LossKind | str = LossKind.PROPOSED
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of the batch-mean loss with respect to anchor, positive and negative embeddings.
    At a hinge kink (argument exactly 0) the inactive side is used.
    """
    _check_margin(eps0)
    which = LossKind(which)
    a, p, n = batch.anchors, batch.positives, batch.negatives
    delta_plus, delta_minus, rho = batch.distances()
    scale = 1.0 / batch.size

    e_ap = _unit(a - p, delta_plus)  # d(delta_plus)/da; negated for p
    e_an = _unit(a - n, delta_minus)  # d(delta_minus)/da; negated for n
    e_pn = _unit(p - n, rho)  # d(rho)/dp; negated for n

    grad_a = np.zeros_like(a)
    grad_p = np.zeros_like(p)
    grad_n = np.zeros_like(n)

    if which is LossKind.SWAP:
        use_rho = rho < delta_minus
        closest = np.where(use_rho, rho, delta_minus)
        active = (delta_plus - closest + eps0 > 0).astype(np.float64)[:, None]
        swap = use_rho[:, None]
        grad_a += active * (e_ap - np.where(swap, 0.0, e_an))
        grad_p += active * (-e_ap - np.where(swap, e_pn, 0.0))
        grad_n += active * np.where(swap, e_pn, e_an)
    else:
        active = (delta_plus - delta_minus + eps0 > 0).astype(np.float64)[:, None]
        grad_a += active * (e_ap - e_an)
        grad_p += active * (-e_ap)
        grad_n += active * e_an

    if which is LossKind.PROPOSED:
        gap = 2.0 * (rho - delta_minus)[:, None]
        grad_a += gap * (-e_an)
        grad_p += gap * e_pn
        grad_n += gap * (-e_pn + e_an)

    return grad_a * scale, grad_p * scale, grad_n * scale


class MetricLossService:

    @staticmethod
    def evaluate(batch: TripletBatch, eps0: float, which: LossKind | str):
        """Loss report and role gradients in one call, as the training loop consumes them."""
        report = compute_loss(batch, eps0, which)
        grads = loss_gradients(batch, eps0, which)
        return report, grads
