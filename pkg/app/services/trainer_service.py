import logging
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..models.cohort import TripletSet
from ..models.network import AdamState, EmbeddingModel, LrSchedule, MlpParams
from ..schemas.config_schemas import TrainConfig
from ..schemas.result_schemas import TrainLogEntry
from ..utils.errors import DataError, DimensionError, NonFiniteLossError, SamplingError
from ..utils.seeding import derive_seed, make_rng
from .metric_loss import LossKind, MetricLossService, TripletBatch, compute_loss
from .numerics import adam_step, lr_at_epoch, mlp_backward, mlp_forward

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "train_loss", "val_loss", "lr", "seconds"]
# deterministic across reruns; `seconds` is wall time
DETERMINISTIC_LOG_COLUMNS = ["epoch", "train_loss", "val_loss", "lr"]


@dataclass
class TrainLog:
    entries: list[TrainLogEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def learning_rates(self) -> list[float]:
        return [entry.lr for entry in self.entries]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([entry.model_dump() for entry in self.entries], columns=LOG_COLUMNS)


def schedule_from_config(config: TrainConfig) -> LrSchedule:
    return LrSchedule(
        initial=config.lr,
        decay=config.decay,
        interval=config.decay_interval,
        start_epoch=config.decay_start,
        final_epoch=config.epochs,
    )


def _check_triplets(triplets: TripletSet, n_rows: int, role: str):
    if len(triplets) and (triplets.triplets.min() < 0 or triplets.triplets.max() >= n_rows):
        raise SamplingError(f"{role} triplet indices fall outside the {n_rows} available rows")


def embed(model: EmbeddingModel, inputs: np.ndarray) -> np.ndarray:
    """Inference-mode embeddings, one row per input row."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != model.params.n_inputs:
        raise DimensionError(
            f"Inputs of shape {inputs.shape} do not match a network with {model.params.n_inputs} inputs"
        )
    if inputs.shape[0] == 0:
        return np.zeros((0, model.output_dim))
    embeddings, _ = mlp_forward(model.params, inputs, training=False)
    return embeddings


def validation_loss(
    model: EmbeddingModel,
    triplets: TripletSet,
    inputs: np.ndarray,
    eps0: float = 1.0,
    loss: LossKind | str = LossKind.PROPOSED,
) -> float:
    if len(triplets) == 0:
        raise SamplingError("Validation loss needs at least one triplet")
    _check_triplets(triplets, len(inputs), "Validation")
    embeddings = embed(model, inputs)
    rows = triplets.triplets
    batch = TripletBatch(embeddings[rows[:, 0]], embeddings[rows[:, 1]], embeddings[rows[:, 2]])
    return compute_loss(batch, eps0, loss).total


def train_embedding_model(
    triplets: TripletSet,
    inputs: np.ndarray,
    config: TrainConfig,
    val_triplets: TripletSet | None = None,
    val_inputs: np.ndarray | None = None,
    feature_names: list[str] | None = None,
) -> tuple[EmbeddingModel, TrainLog]:
    """
    Trains the embedding network for `config.epochs` passes over the triplet set.
    Each batch stacks anchors, positives and negatives into one forward pass through
    the same parameters; Adam runs at the scheduled rate of the current epoch.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise DimensionError(f"Training inputs must be a matrix, got shape {inputs.shape}")
    if feature_names is not None and len(feature_names) != inputs.shape[1]:
        raise DimensionError(f"{len(feature_names)} feature names for {inputs.shape[1]} input columns")
    _check_triplets(triplets, inputs.shape[0], "Training")
    if config.epochs > 0 and len(triplets) == 0:
        raise SamplingError("Training needs at least one triplet")
    monitor = val_triplets is not None and len(val_triplets) > 0
    if monitor:
        if val_inputs is None:
            raise DimensionError("Validation triplets were given without validation inputs")
        _check_triplets(val_triplets, len(val_inputs), "Validation")

    rng = make_rng(config.seed)
    params = MlpParams.initialize(inputs.shape[1], config.dim, rng, hidden=tuple(config.hidden))
    state = AdamState.fresh(params, learning_rate=config.lr)
    schedule = schedule_from_config(config)
    model = EmbeddingModel(params, list(feature_names or []), dropout_p=config.dropout)
    log = TrainLog()
    rows = triplets.triplets
    k = len(triplets)
    logger.info(
        f"Training {config.loss.value} embeddings on {k} triplets: n={inputs.shape[1]}, "
        f"d={config.dim}, hidden={tuple(config.hidden)}, epochs={config.epochs}"
    )

    for epoch in range(config.epochs):
        started = time.perf_counter()
        state.learning_rate = lr_at_epoch(schedule, epoch)
        order = rng.permutation(k)
        total = 0.0
        for b, start in enumerate(range(0, k, config.batch_size)):
            chosen = rows[order[start:start + config.batch_size]]
            stacked = inputs[np.concatenate([chosen[:, 0], chosen[:, 1], chosen[:, 2]])]
            outputs, tape = mlp_forward(params, stacked, config.dropout, training=True, rng=rng)
            batch = TripletBatch.from_stacked(outputs)
            report, (grad_a, grad_p, grad_n) = MetricLossService.evaluate(batch, config.eps0, config.loss)
            if not np.isfinite(report.total):
                raise NonFiniteLossError(epoch, b, {
                    "total": report.total,
                    "hinge": report.hinge,
                    "regularization": report.regularization,
                })
            grads, _ = mlp_backward(tape, np.vstack([grad_a, grad_p, grad_n]), params)
            params, state = adam_step(params, grads, state)
            total += report.total * batch.size
        model = EmbeddingModel(params, model.feature_names, dropout_p=config.dropout)
        val = None
        if monitor:
            val = validation_loss(model, val_triplets, val_inputs, config.eps0, config.loss)
        entry = TrainLogEntry(
            epoch=epoch,
            train_loss=total / k,
            val_loss=val,
            lr=state.learning_rate,
            seconds=time.perf_counter() - started,
        )
        log.entries.append(entry)
        logger.debug(f"epoch {epoch}: train={entry.train_loss:.6g} val={val} lr={entry.lr:.6g}")

    if log.entries:
        logger.info(f"Finished training, final loss {log.entries[-1].train_loss:.6g}")
    return model, log


def train_per_sex(
    triplets: dict[str, TripletSet],
    inputs: dict[str, np.ndarray],
    config: TrainConfig,
    val_triplets: dict[str, TripletSet] | None = None,
    val_inputs: dict[str, np.ndarray] | None = None,
    feature_names: list[str] | None = None,
) -> dict[str, tuple[EmbeddingModel, TrainLog]]:
    """One independently seeded model per sex."""
    val_triplets = val_triplets or {}
    val_inputs = val_inputs or {}
    results = {}
    for sex in sorted(triplets):
        sex_config = config.model_copy(update={"seed": derive_seed(config.seed, f"train-{sex}")})
        results[sex] = train_embedding_model(
            triplets[sex],
            inputs[sex],
            sex_config,
            val_triplets=val_triplets.get(sex),
            val_inputs=val_inputs.get(sex),
            feature_names=feature_names,
        )
    return results


class TrainerService:

    @staticmethod
    def embed_rows(models: dict[str, EmbeddingModel], inputs: np.ndarray, sexes: np.ndarray) -> np.ndarray:
        """Embeds each row with the model of its sex, or the pooled model stored under ''."""
        if not models:
            raise DimensionError("No embedding models were supplied")
        dim = next(iter(models.values())).output_dim
        out = np.zeros((len(inputs), dim))
        if "" in models:
            return embed(models[""], inputs)
        missing = sorted(set(np.asarray(sexes).tolist()) - set(models))
        if missing:
            raise DataError(f"No embedding model for sex {missing}; models exist for {sorted(models)}")
        for sex, model in models.items():
            mask = np.asarray(sexes) == sex
            if mask.any():
                out[mask] = embed(model, np.asarray(inputs)[mask])
        return out
