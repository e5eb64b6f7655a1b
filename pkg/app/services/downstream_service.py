"""Representation-quality evaluation and next-visit biomarker prediction."""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from ..models.cohort import DEFAULT_CONDITIONS
from ..schemas.config_schemas import GbtParams
from ..schemas.result_schemas import ClassifierEval, PredictionTask
from ..utils.errors import DimensionError
from ..utils.seeding import derive_seed, make_rng
from .classifiers import confusion_matrix, f1_from_confusion, knn_classify, lda_fit_predict
from .cohort_service import class_ids, healthy_flags
from .gbt_service import gbt_fit, gbt_predict

logger = logging.getLogger(__name__)

CLASSIFIERS = ("knn", "lda")
TASKS = ("binary", "multiclass")
BINARY_CLASSES = ("healthy", "unhealthy")

MARKER_ONLY = "marker_only"
VARIANTS = {
    MARKER_ONLY: (),
    "marker_biomarkers_lifestyle": ("biomarkers", "lifestyle"),
    "marker_embeddings": ("embeddings",),
    "marker_embeddings_lifestyle": ("embeddings", "lifestyle"),
}
RELATIVE_IMPROVEMENT = 0.05


def r2_score(targets, predictions) -> float:
    """1 - SS_res / SS_tot about the mean of `targets`; 0 with a warning when SS_tot is 0."""
    y = np.asarray(targets, dtype=np.float64)
    yhat = np.asarray(predictions, dtype=np.float64)
    if y.shape != yhat.shape:
        raise DimensionError(f"Targets {y.shape} and predictions {yhat.shape} differ in shape")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - yhat) ** 2))
    if ss_tot == 0.0:
        logger.warning(f"Constant target over {y.size} rows; reporting R^2 = 0")
        return 0.0
    return 1.0 - ss_res / ss_tot


def task_labels(labels, task: str, vocabulary: tuple[str, ...] = DEFAULT_CONDITIONS) -> tuple[np.ndarray, tuple[str, ...]]:
    """Integer class ids and class names for the binary (healthy vs any condition) or multiclass task."""
    if task == "binary":
        return (~healthy_flags(labels)).astype(np.int64), BINARY_CLASSES
    if task == "multiclass":
        return class_ids(labels, vocabulary), tuple(vocabulary)
    raise ValueError(f"Unknown task '{task}'")


def classify(classifier: str, train_reps, train_labels, query_reps, k: int = 5) -> np.ndarray:
    if classifier == "knn":
        return knn_classify(train_reps, train_labels, query_reps, k)
    if classifier == "lda":
        return lda_fit_predict(train_reps, train_labels, query_reps)
    raise ValueError(f"Unknown classifier '{classifier}'")


def score_predictions(
    true_ids, predicted_ids, class_names: tuple[str, ...], representation: str, classifier: str, task: str, seed: int
) -> ClassifierEval:
    matrix = confusion_matrix(true_ids, predicted_ids, len(class_names))
    weighted, per_class = f1_from_confusion(matrix)
    return ClassifierEval(
        representation=representation,
        classifier=classifier,
        task=task,
        weighted_f1=weighted,
        per_class_f1=dict(zip(class_names, per_class)),
        confusion=matrix.tolist(),
        seed=seed,
    )


def evaluate_representations(
    representations: dict[str, list[tuple[np.ndarray, np.ndarray]]],
    train_labels: list[np.ndarray],
    test_labels: list[np.ndarray],
    classifiers: tuple[str, ...] = CLASSIFIERS,
    tasks: tuple[str, ...] = TASKS,
    k: int = 5,
    seed: int = 0,
    vocabulary: tuple[str, ...] = DEFAULT_CONDITIONS,
) -> list[ClassifierEval]:
    """
    Weighted F1 on the held-out rows for every representation x classifier x task.
    Each representation is a list of (train, test) blocks, one per separately fitted
    group (one per sex); classifiers are fitted per block and predictions pooled.
    """
    results = []
    for name, blocks in representations.items():
        if len(blocks) != len(train_labels) or len(blocks) != len(test_labels):
            raise DimensionError(f"Representation '{name}' has {len(blocks)} blocks for {len(train_labels)} label sets")
        for classifier in classifiers:
            for task in tasks:
                truth, predicted = [], []
                class_names = None
                for (train_reps, test_reps), fit_labels, held_labels in zip(blocks, train_labels, test_labels):
                    fit_ids, class_names = task_labels(fit_labels, task, vocabulary)
                    held_ids, _ = task_labels(held_labels, task, vocabulary)
                    predicted.append(classify(classifier, train_reps, fit_ids, test_reps, k))
                    truth.append(held_ids)
                result = score_predictions(
                    np.concatenate(truth), np.concatenate(predicted), class_names, name, classifier, task, seed
                )
                undefined = [c for c, f1 in result.per_class_f1.items() if f1 is None]
                if undefined:
                    logger.info(f"{name}/{classifier}/{task}: no test support for {undefined}")
                results.append(result)
                logger.info(f"{name}/{classifier}/{task}: weighted F1 {result.weighted_f1:.4f}")
    return results


def input_columns(
    marker: str,
    variant: str,
    biomarkers: list[str],
    lifestyle: list[str],
    embedding_columns: list[str],
    use_elapsed: bool = True,
) -> list[str]:
    """Age, sex and the current marker value always; then the variant's blocks."""
    if variant not in VARIANTS:
        raise ValueError(f"Unknown prediction variant '{variant}'")
    columns = ["age", "sex_male", marker]
    if use_elapsed:
        columns.append("elapsed_years")
    blocks = {
        "biomarkers": [b for b in biomarkers if b != marker],
        "lifestyle": list(lifestyle),
        "embeddings": list(embedding_columns),
    }
    for block in VARIANTS[variant]:
        columns.extend(blocks[block])
    return columns


def fold_assignment(n: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Held-out fold per row; folds partition the rows and differ in size by at most one."""
    if n < folds:
        raise ValueError(f"Cannot split {n} rows into {folds} folds")
    assignment = np.empty(n, dtype=np.int64)
    for fold, part in enumerate(np.array_split(rng.permutation(n), folds)):
        assignment[part] = fold
    return assignment


def _fit_fold(x, y, assignment, fold, params):
    held = assignment == fold
    model = gbt_fit(x[~held], y[~held], params)
    return fold, gbt_predict(model, x[held])


def cross_validate(
    x: np.ndarray, y: np.ndarray, assignment: np.ndarray, params: GbtParams, pool: ThreadPoolExecutor | None = None
) -> tuple[list[float], np.ndarray]:
    """Per-fold held-out R^2 and the pooled out-of-fold predictions."""
    folds = sorted(np.unique(assignment).tolist())
    if pool is not None:
        outputs = list(pool.map(lambda f: _fit_fold(x, y, assignment, f, params), folds))
    else:
        outputs = [_fit_fold(x, y, assignment, f, params) for f in folds]
    out_of_fold = np.empty(y.shape[0])
    fold_r2 = []
    for fold, predictions in outputs:
        held = assignment == fold
        out_of_fold[held] = predictions
        fold_r2.append(r2_score(y[held], predictions))
    return fold_r2, out_of_fold


def age_group_r2(y: np.ndarray, predictions: np.ndarray, age_groups: np.ndarray) -> dict[str, float]:
    scores = {}
    for group in sorted(pd.unique(age_groups).tolist()):
        mask = age_groups == group
        if mask.sum() >= 2:
            scores[str(group)] = r2_score(y[mask], predictions[mask])
    return scores


def predict_future_values(
    cohort: pd.DataFrame,
    marker: str,
    biomarkers: list[str],
    lifestyle: list[str],
    embedding_columns: list[str],
    variants: tuple[str, ...] = tuple(VARIANTS),
    folds: int = 5,
    params: GbtParams = GbtParams(),
    seed: int = 0,
    use_elapsed: bool = True,
    min_participants: int = 50,
    threads: int = 1,
) -> list[PredictionTask]:
    """
    Five-fold cross-validated GBT prediction of the follow-up value of `marker`.
    `cohort` has one row per eligible participant: visit-1 inputs, `sex_male`, `elapsed_years`,
    `age_group` and the follow-up value in `target`. All variants share one fold assignment.
    """
    eligible = cohort.dropna(subset=["target", marker]).reset_index(drop=True)
    if len(eligible) < min_participants:
        logger.warning(
            f"Skipping '{marker}': {len(eligible)} eligible participants, at least {min_participants} needed"
        )
        return []
    rng = make_rng(derive_seed(seed, f"cv-{marker}"))
    assignment = fold_assignment(len(eligible), folds, rng)
    y = eligible["target"].to_numpy(dtype=np.float64)
    age_groups = eligible["age_group"].to_numpy() if "age_group" in eligible.columns else np.full(len(y), "all")

    tasks = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for variant in variants:
            columns = input_columns(marker, variant, biomarkers, lifestyle, embedding_columns, use_elapsed)
            x = eligible[columns].to_numpy(dtype=np.float64)
            fold_r2, out_of_fold = cross_validate(x, y, assignment, params, pool)
            tasks.append(PredictionTask(
                marker=marker,
                variant=variant,
                n_participants=len(eligible),
                folds=assignment.tolist(),
                fold_r2=fold_r2,
                r2_mean=float(np.mean(fold_r2)),
                r2_sd=float(np.std(fold_r2, ddof=1)) if len(fold_r2) > 1 else 0.0,
                age_group_r2=age_group_r2(y, out_of_fold, age_groups),
            ))
            logger.info(f"{marker}/{variant}: R^2 {tasks[-1].r2_mean:.4f} +- {tasks[-1].r2_sd:.4f}")
    finally:
        if pool is not None:
            pool.shutdown()
    return tasks


def improvement_summary(
    tasks: list[PredictionTask], baseline: str = MARKER_ONLY, relative: float = RELATIVE_IMPROVEMENT
) -> pd.DataFrame:
    """Share of age groups where each variant beats the baseline R^2 by more than `relative`."""
    rows = []
    by_key = {(t.marker, t.variant): t for t in tasks}
    for task in tasks:
        if task.variant == baseline or (task.marker, baseline) not in by_key:
            continue
        reference = by_key[(task.marker, baseline)].age_group_r2
        shared = [g for g in task.age_group_r2 if g in reference]
        improved = sum(
            1 for g in shared if task.age_group_r2[g] > reference[g] + relative * abs(reference[g])
        )
        rows.append({
            "marker": task.marker,
            "variant": task.variant,
            "groups_compared": len(shared),
            "groups_improved": improved,
            "fraction_improved": improved / len(shared) if shared else 0.0,
        })
    return pd.DataFrame(rows, columns=["marker", "variant", "groups_compared", "groups_improved", "fraction_improved"])


class DownstreamService:

    @staticmethod
    def eval_frame(results: list[ClassifierEval]) -> pd.DataFrame:
        return pd.DataFrame(
            [r.row() for r in results],
            columns=["representation", "classifier", "task", "weighted_f1", "seed"],
        )

    @staticmethod
    def fold_frame(tasks: list[PredictionTask]) -> pd.DataFrame:
        rows = [score.model_dump() for task in tasks for score in task.fold_scores()]
        return pd.DataFrame(rows, columns=["marker", "variant", "fold", "r2"])

    @staticmethod
    def summary_frame(tasks: list[PredictionTask]) -> pd.DataFrame:
        rows = [
            {"marker": t.marker, "variant": t.variant, "n": t.n_participants, "r2_mean": t.r2_mean, "r2_sd": t.r2_sd}
            for t in tasks
        ]
        return pd.DataFrame(rows, columns=["marker", "variant", "n", "r2_mean", "r2_sd"])

    @staticmethod
    def age_group_frame(tasks: list[PredictionTask]) -> pd.DataFrame:
        rows = [
            {"marker": t.marker, "variant": t.variant, "age_group": group, "r2": r2}
            for t in tasks
            for group, r2 in t.age_group_r2.items()
        ]
        return pd.DataFrame(rows, columns=["marker", "variant", "age_group", "r2"])
