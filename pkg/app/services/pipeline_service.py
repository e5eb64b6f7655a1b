"""
Stage functions behind the command line. Each stage reads upstream artifacts from the
run directory, writes its own outputs and records them in the run manifest.
"""
import functools
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from ..models.cohort import SEXES, CohortTable, FeatureSpec, LifestyleStrata, QuantileTransform, SplitIndices, TripletSet
from ..models.network import EmbeddingModel
from ..schemas.config_schemas import PrepConfig, RunConfig, TrainConfig
from ..schemas.result_schemas import RunManifest, StageRecord
from ..storage import (
    FORMAT_VERSIONS,
    file_digest,
    load_checkpoint,
    load_cohort,
    load_feature_schema,
    load_followup,
    load_frame,
    load_manifest,
    load_reference_ranges,
    load_splits,
    load_triplets,
    require,
    save_checkpoint,
    save_frame,
    save_json,
    save_manifest,
    save_splits,
    save_transform,
    save_triplets,
    write_cohort,
    write_feature_schema,
    write_reference_ranges,
)
from ..utils.errors import ConfigError, StageDependencyError
from ..utils.seeding import derive_seed, stage_rng
from .classifiers import pca_apply, pca_fit
from .cohort_service import CohortService, healthy_flags, sample_triplets, split_cohort, triplet_capacity
from .downstream_service import DownstreamService, evaluate_representations, improvement_summary, predict_future_values
from .stats_service import StatsService, lifestyle_significance_report, percentile_bands
from .synth_service import SynthService, build_generator_spec
from .trainer_service import LOG_COLUMNS, DETERMINISTIC_LOG_COLUMNS, train_embedding_model, train_per_sex, TrainerService

logger = logging.getLogger(__name__)

POOLED = ""
EMBEDDING_PREFIX = "emb_"
NEXT_PREFIX = "next_"
REPRESENTATIONS = ("raw", "pca", "deep")
# wall-clock columns are left out of train-log digests
_VOLATILE_LOG_COLUMNS = tuple(c for c in LOG_COLUMNS if c not in DETERMINISTIC_LOG_COLUMNS)


@dataclass(frozen=True)
class RunLayout:
    """File locations of every artifact under the run directory."""

    out_dir: Path

    @classmethod
    def of(cls, config: RunConfig) -> "RunLayout":
        return cls(Path(config.paths.out_dir))

    @property
    def manifest(self) -> Path:
        return self.out_dir / "manifest.json"

    @property
    def prep(self) -> Path:
        return self.out_dir / "prep"

    @property
    def labeled(self) -> Path:
        return self.prep / "labeled.csv"

    @property
    def strata(self) -> Path:
        return self.prep / "strata.csv"

    @property
    def splits(self) -> Path:
        return self.prep / "splits.csv"

    @property
    def features(self) -> Path:
        return self.prep / "features.csv"

    def processed(self, sex: str) -> Path:
        return self.prep / f"processed_{sex}.csv"

    def transform(self, sex: str) -> Path:
        return self.prep / f"transform_{sex}.tcqn"

    def triplets(self, sex: str, split: str = "train") -> Path:
        prefix = "triplets" if split == "train" else f"triplets_{split}"
        return self.prep / f"{prefix}_{sex}.csv"

    def checkpoint(self, key: str) -> Path:
        return self.out_dir / "train" / f"model_{key or 'pooled'}.tcemb"

    def train_log(self, key: str) -> Path:
        return self.out_dir / "train" / f"train_log_{key or 'pooled'}.csv"

    @property
    def significance(self) -> Path:
        return self.out_dir / "stats" / "significance.csv"

    @property
    def families(self) -> Path:
        return self.out_dir / "stats" / "families.csv"

    @property
    def percentiles(self) -> Path:
        return self.out_dir / "stats" / "percentiles.csv"

    @property
    def embeddings(self) -> Path:
        return self.out_dir / "embed" / "embeddings.csv"

    @property
    def classifier_eval(self) -> Path:
        return self.out_dir / "eval" / "classifier_eval.csv"

    def prediction(self, name: str) -> Path:
        return self.out_dir / "predict" / f"{name}.csv"


@dataclass
class PreparedSex:
    """Normalized rows of one sex with the triplets sampled from its training and validation rows."""

    sex: str
    table: CohortTable
    train_triplets: TripletSet
    val_triplets: Optional[TripletSet] = None
    transform: Optional[QuantileTransform] = None

    def rows(self, ids) -> CohortTable:
        return self.table.subset(np.isin(self.table.ids, ids))


def _relative(path: Path, out_dir: Path) -> str:
    return Path(os.path.relpath(Path(path).resolve(), out_dir.resolve())).as_posix()


def output_digest(path: Path) -> str:
    if path.name.startswith("train_log"):
        return file_digest(path, ignore_columns=_VOLATILE_LOG_COLUMNS)
    return file_digest(path)


def record_stage(config: RunConfig, name: str, outputs: list[Path], seconds: float) -> RunManifest:
    layout = RunLayout.of(config)
    manifest = load_manifest(layout.manifest) if layout.manifest.exists() else RunManifest()
    manifest.config = config.model_dump(mode="json")
    manifest.formats = dict(FORMAT_VERSIONS)
    relative = [_relative(path, layout.out_dir) for path in outputs]
    manifest.stages[name] = StageRecord(seconds=seconds, outputs=relative)
    for key, path in zip(relative, outputs):
        manifest.digests[key] = output_digest(Path(path))
    save_manifest(manifest, layout.manifest)
    return manifest


def stage(name: str) -> Callable:
    """Times a stage function and records its outputs in the run manifest."""

    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(config: RunConfig, threads: int = 1) -> list[Path]:
            logger.info(f"Stage '{name}' started")
            started = time.perf_counter()
            outputs = func(config, threads)
            seconds = time.perf_counter() - started
            record_stage(config, name, outputs, seconds)
            logger.info(f"Stage '{name}' finished in {seconds:.2f}s with {len(outputs)} outputs")
            return outputs

        wrapper.stage_name = name
        return wrapper

    return decorator


def _sexes_in(table: CohortTable) -> list[str]:
    present = set(table.sex.tolist())
    return [sex for sex in SEXES if sex in present]


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def _val_triplet_count(labels, prep: PrepConfig) -> int:
    """Validation triplets scale with the val/train size ratio, capped by what the labels admit."""
    if prep.train_fraction == 0.0:
        return 0
    wanted = _round_half_up(prep.triplets * prep.val_fraction / prep.train_fraction)
    capacity = triplet_capacity(np.asarray(labels))
    if wanted > capacity:
        logger.warning(f"Only {capacity} validation triplets exist; {wanted} were wanted")
    return min(wanted, capacity)


def _prepare_sex(labeled: CohortTable, splits: SplitIndices, sex: str, prep: PrepConfig, seed: int) -> PreparedSex:
    """Normalization within one sex plus training and validation triplets over its split rows."""
    table, transform = CohortService.normalize_split(labeled, splits, sex)
    part = PreparedSex(sex, table, TripletSet(np.zeros((0, 3), dtype=np.int64)), transform=transform)
    train = part.rows(splits.train)
    part.train_triplets = sample_triplets(
        train, stage_rng(seed, f"triplets-{sex}"), prep.triplets, seed=seed, split="train"
    )
    val = part.rows(splits.val)
    count = _val_triplet_count(val.conditions, prep)
    if count:
        part.val_triplets = sample_triplets(val, stage_rng(seed, f"triplets-val-{sex}"), count, seed=seed, split="val")
    logger.info(
        f"Sex '{sex}': {train.n_rows} train rows, {len(part.train_triplets)} train triplets, "
        f"{0 if part.val_triplets is None else len(part.val_triplets)} validation triplets"
    )
    return part


def _holdout_ids(config: RunConfig, schema: list[FeatureSpec], labeled: CohortTable) -> np.ndarray:
    """Preprocessed participants with a follow-up visit inside the configured window."""
    window = (config.prep.followup_min_years, config.prep.followup_max_years)
    followup = load_followup(require(config.paths.followup), schema, window)
    ids = np.intersect1d(followup.ids, labeled.ids)
    dropped = np.unique(followup.ids).size - ids.size
    if dropped:
        logger.info(f"{dropped} follow-up participants did not survive preprocessing")
    return ids


def _train_models(
    prepared: dict[str, PreparedSex], splits: SplitIndices, train: TrainConfig, seed: int
) -> dict[str, tuple]:
    """One model per sex, or one pooled model keyed '' over F rows then M rows."""
    config = train.model_copy(update={"seed": seed})
    inputs, val_inputs, names = {}, {}, None
    for sex, part in prepared.items():
        names = CohortService.model_inputs(part.table)
        inputs[sex] = part.rows(splits.train).feature_matrix(names)
        val_inputs[sex] = part.rows(splits.val).feature_matrix(names)
    triplets = {sex: part.train_triplets for sex, part in prepared.items()}
    val_triplets = {sex: part.val_triplets for sex, part in prepared.items() if part.val_triplets is not None}
    if config.per_sex:
        return train_per_sex(triplets, inputs, config, val_triplets, val_inputs, names)

    def _stack(sets: dict[str, TripletSet], matrices: dict[str, np.ndarray], split: str) -> TripletSet:
        offset, blocks = 0, []
        for sex in prepared:
            if sex in sets:
                blocks.append(sets[sex].triplets + offset)
            offset += len(matrices[sex])
        rows = np.vstack(blocks) if blocks else np.zeros((0, 3), dtype=np.int64)
        return TripletSet(rows, split=split, seed=seed)

    pooled_val = _stack(val_triplets, val_inputs, "val")
    return {
        POOLED: train_embedding_model(
            _stack(triplets, inputs, "train"),
            np.vstack(list(inputs.values())),
            config,
            val_triplets=pooled_val if len(pooled_val) else None,
            val_inputs=np.vstack(list(val_inputs.values())),
            feature_names=names,
        )
    }


def _kept_schema(layout: RunLayout) -> list[FeatureSpec]:
    return load_feature_schema(require(layout.features))


def _load_labeled(layout: RunLayout, schema: list[FeatureSpec]) -> CohortTable:
    return CohortTable(load_frame(layout.labeled), list(schema))


def _load_prepared(layout: RunLayout, schema: list[FeatureSpec], seed: int) -> dict[str, PreparedSex]:
    sexes = [sex for sex in SEXES if layout.processed(sex).exists()]
    if not sexes:
        raise StageDependencyError(layout.processed(SEXES[0]))
    prepared = {}
    for sex in sexes:
        val_path = layout.triplets(sex, "val")
        prepared[sex] = PreparedSex(
            sex=sex,
            table=CohortTable(load_frame(layout.processed(sex)), list(schema)),
            train_triplets=load_triplets(layout.triplets(sex), "train", seed),
            val_triplets=load_triplets(val_path, "val", seed) if val_path.exists() else None,
        )
    return prepared


def _load_models(layout: RunLayout, config: RunConfig, sexes, feature_names: list[str]) -> dict[str, EmbeddingModel]:
    keys = list(sexes) if config.train.per_sex else [POOLED]
    return {
        key: EmbeddingModel(load_checkpoint(layout.checkpoint(key)), list(feature_names), config.train.dropout)
        for key in keys
    }


def _embedding_frame(ids, coordinates: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame(coordinates, columns=[f"{EMBEDDING_PREFIX}{i}" for i in range(coordinates.shape[1])])
    frame.insert(0, "id", np.asarray(ids))
    return frame


@stage("gen")
def cmd_gen(config: RunConfig, threads: int = 1) -> list[Path]:
    """Synthetic cohort, follow-up visits, feature schema, reference ranges and ground truth."""
    spec = build_generator_spec(config.generator, config.seed)
    cohort = SynthService.generate(spec)
    paths = config.paths
    truth_dir = Path(paths.cohort).parent
    return [
        write_cohort(cohort.table, paths.cohort),
        write_cohort(cohort.followup, paths.followup),
        write_feature_schema(cohort.schema, paths.features),
        write_reference_ranges(cohort.reference_ranges, paths.reference_ranges),
        save_frame(cohort.truth.to_frame(spec.biomarker_names), truth_dir / "ground_truth.csv"),
        save_json(spec.model_dump(mode="json"), truth_dir / "generator_spec.json"),
    ]


@stage("prep")
def cmd_prep(config: RunConfig, threads: int = 1) -> list[Path]:
    layout = RunLayout.of(config)
    paths = config.paths
    schema = load_feature_schema(require(paths.features))
    ranges = load_reference_ranges(require(paths.reference_ranges))
    cohort = load_cohort(require(paths.cohort), schema)
    first_visits = cohort.frame["visit_index"].to_numpy() == 1
    if not first_visits.all():
        logger.info(f"Keeping the {int(first_visits.sum())} first-visit rows of {cohort.n_rows}")
        cohort = cohort.subset(first_visits)

    labeled, strata = CohortService.preprocess(cohort, ranges, config.prep.completeness)
    holdout = _holdout_ids(config, schema, labeled)
    splits = split_cohort(labeled, stage_rng(config.seed, "split"), config.prep.fractions, holdout)
    outputs = [
        save_frame(labeled.frame, layout.labeled),
        save_frame(strata.frame, layout.strata),
        save_splits(splits, layout.splits),
        write_feature_schema(labeled.features, layout.features),
    ]
    for sex in _sexes_in(labeled):
        part = _prepare_sex(labeled, splits, sex, config.prep, config.seed)
        outputs.append(save_frame(part.table.frame, layout.processed(sex)))
        outputs.append(save_transform(part.transform, layout.transform(sex)))
        outputs.append(save_triplets(part.train_triplets, layout.triplets(sex)))
        if part.val_triplets is not None:
            outputs.append(save_triplets(part.val_triplets, layout.triplets(sex, "val")))
        else:
            layout.triplets(sex, "val").unlink(missing_ok=True)
    return outputs


@stage("train")
def cmd_train(config: RunConfig, threads: int = 1) -> list[Path]:
    layout = RunLayout.of(config)
    prepared = _load_prepared(layout, _kept_schema(layout), config.seed)
    splits = load_splits(layout.splits)
    trained = _train_models(prepared, splits, config.train, derive_seed(config.seed, "train"))
    outputs = []
    for key, (model, log) in trained.items():
        outputs.append(save_checkpoint(model.params, layout.checkpoint(key)))
        outputs.append(save_frame(log.to_frame(), layout.train_log(key)))
    return outputs


@stage("stats")
def cmd_stats(config: RunConfig, threads: int = 1) -> list[Path]:
    layout = RunLayout.of(config)
    table = _load_labeled(layout, _kept_schema(layout))
    strata = LifestyleStrata(load_frame(layout.strata))
    if config.stats.healthy_only:
        table = table.subset(healthy_flags(table.conditions))
        logger.info(f"Testing lifestyle effects on {table.n_rows} healthy participants")
    markers = config.stats.markers or table.biomarker_names
    unknown = [m for m in markers if m not in table.biomarker_names]
    if unknown:
        raise ConfigError(f"stats.markers names biomarkers not in the processed cohort: {unknown}")

    report = lifestyle_significance_report(table, strata, markers, config.stats.q, threads=threads)
    for summary in report.summaries:
        logger.info(
            f"{summary.sex}/{summary.axis}: {summary.rejections} of {summary.tests} tests rejected, "
            f"{summary.significant_in_any_group} of {summary.markers_tested} markers in some age group"
        )
    return [
        save_frame(report.to_frame(), layout.significance),
        save_frame(StatsService.summary_frame(report), layout.families),
        save_frame(percentile_bands(table, markers), layout.percentiles),
    ]


@stage("embed")
def cmd_embed(config: RunConfig, threads: int = 1) -> list[Path]:
    layout = RunLayout.of(config)
    schema = _kept_schema(layout)
    prepared = _load_prepared(layout, schema, config.seed)
    names = CohortService.model_inputs(next(iter(prepared.values())).table)
    models = _load_models(layout, config, prepared, names)
    frames = []
    for part in prepared.values():
        coordinates = TrainerService.embed_rows(models, part.table.feature_matrix(names), part.table.sex)
        frames.append(_embedding_frame(part.table.ids, coordinates))
    frame = pd.concat(frames, ignore_index=True).sort_values("id", kind="stable").reset_index(drop=True)
    return [save_frame(frame, layout.embeddings)]


def _matrix_rank(rows: np.ndarray) -> int:
    if rows.shape[0] < 2:
        return 0
    return int(np.linalg.matrix_rank(rows - rows.mean(axis=0)))


def _evaluate_split(
    prepared: dict[str, PreparedSex],
    splits: SplitIndices,
    models: dict[str, EmbeddingModel],
    config: RunConfig,
    seed: int,
) -> list:
    """Raw inputs, PCA with as many components as the embedding, and embeddings, per sex."""
    dim = next(iter(models.values())).output_dim
    blocks = {name: [] for name in REPRESENTATIONS}
    train_labels, test_labels = [], []
    for part in prepared.values():
        names = CohortService.model_inputs(part.table)
        train, test = part.rows(splits.train), part.rows(splits.test)
        x_train, x_test = train.feature_matrix(names), test.feature_matrix(names)
        pca = pca_fit(x_train, max(1, min(dim, _matrix_rank(x_train))))
        blocks["raw"].append((x_train, x_test))
        blocks["pca"].append((pca_apply(pca, x_train), pca_apply(pca, x_test)))
        blocks["deep"].append((
            TrainerService.embed_rows(models, x_train, train.sex),
            TrainerService.embed_rows(models, x_test, test.sex),
        ))
        train_labels.append(train.conditions)
        test_labels.append(test.conditions)
    return evaluate_representations(blocks, train_labels, test_labels, k=config.downstream.knn_k, seed=seed)


def _rebuild(config: RunConfig, labeled: CohortTable, holdout: np.ndarray, seed: int):
    """Split, triplets and training redone in memory under a repeat seed."""
    splits = split_cohort(labeled, stage_rng(seed, "split"), config.prep.fractions, holdout)
    prepared = {sex: _prepare_sex(labeled, splits, sex, config.prep, seed) for sex in _sexes_in(labeled)}
    trained = _train_models(prepared, splits, config.train, derive_seed(seed, "train"))
    return prepared, splits, {key: model for key, (model, _) in trained.items()}


@stage("eval")
def cmd_eval(config: RunConfig, threads: int = 1) -> list[Path]:
    layout = RunLayout.of(config)
    schema = _kept_schema(layout)
    prepared = _load_prepared(layout, schema, config.seed)
    splits = load_splits(layout.splits)
    names = CohortService.model_inputs(next(iter(prepared.values())).table)
    models = _load_models(layout, config, prepared, names)
    results = _evaluate_split(prepared, splits, models, config, config.seed)

    if config.downstream.repeats > 1:
        labeled = _load_labeled(layout, schema)
        holdout = _holdout_ids(config, load_feature_schema(require(config.paths.features)), labeled)
        for repeat in range(1, config.downstream.repeats):
            seed = derive_seed(config.seed, f"repeat-{repeat}")
            logger.info(f"Evaluation repeat {repeat} with seed {seed}")
            results.extend(_evaluate_split(*_rebuild(config, labeled, holdout, seed), config, seed))
    return [save_frame(DownstreamService.eval_frame(results), layout.classifier_eval)]


def _prediction_markers(config: RunConfig, schema: list[FeatureSpec]) -> list[str]:
    biomarkers = [f.name for f in schema if f.kind == "biomarker"]
    if config.downstream.markers:
        unknown = [m for m in config.downstream.markers if m not in biomarkers]
        if unknown:
            raise ConfigError(f"downstream.markers names biomarkers not in the processed cohort: {unknown}")
        return list(config.downstream.markers)
    interest = [f.name for f in schema if f.kind == "biomarker" and f.marker_of_interest]
    return interest or biomarkers


def prediction_frame(
    labeled: CohortTable,
    followup: CohortTable,
    embeddings: pd.DataFrame,
    markers: list[str],
    healthy_only: bool = True,
) -> pd.DataFrame:
    """
    One row per participant with a follow-up visit: visit-1 values, `sex_male`, the follow-up
    `elapsed_years`, embedding coordinates and each marker's follow-up value as `next_<marker>`.
    """
    base = labeled.frame.drop(columns=["visit_index", "elapsed_years"])
    if healthy_only:
        base = base.loc[healthy_flags(base["condition_code"].to_numpy())]
    later = followup.frame[["id", "elapsed_years"] + markers].drop_duplicates("id", keep="first")
    later = later.rename(columns={m: f"{NEXT_PREFIX}{m}" for m in markers})
    frame = base.merge(later, on="id", how="inner").merge(embeddings, on="id", how="inner")
    frame["sex_male"] = (frame["sex"] == "M").astype(np.float64)
    return frame.sort_values("id", kind="stable").reset_index(drop=True)


@stage("predict")
def cmd_predict(config: RunConfig, threads: int = 1) -> list[Path]:
    layout = RunLayout.of(config)
    schema = _kept_schema(layout)
    labeled = _load_labeled(layout, schema)
    window = (config.prep.followup_min_years, config.prep.followup_max_years)
    followup = load_followup(require(config.paths.followup), load_feature_schema(require(config.paths.features)), window)
    embeddings = load_frame(layout.embeddings)
    markers = _prediction_markers(config, schema)
    frame = prediction_frame(labeled, followup, embeddings, markers, config.downstream.healthy_only)
    embedding_columns = [c for c in embeddings.columns if c != "id"]
    logger.info(f"Predicting {len(markers)} markers for {len(frame)} participants with a follow-up visit")

    tasks = []
    for marker in markers:
        tasks.extend(predict_future_values(
            frame.assign(target=frame[f"{NEXT_PREFIX}{marker}"]),
            marker,
            labeled.biomarker_names,
            labeled.lifestyle_names,
            embedding_columns,
            folds=config.downstream.folds,
            params=config.downstream.gbt,
            seed=derive_seed(config.seed, "predict"),
            use_elapsed=config.downstream.use_elapsed,
            min_participants=config.downstream.min_participants,
            threads=threads,
        ))
    return [
        save_frame(DownstreamService.fold_frame(tasks), layout.prediction("fold_r2")),
        save_frame(DownstreamService.summary_frame(tasks), layout.prediction("summary")),
        save_frame(DownstreamService.age_group_frame(tasks), layout.prediction("age_groups")),
        save_frame(improvement_summary(tasks), layout.prediction("improvement")),
    ]


STAGE_FUNCTIONS = {
    func.stage_name: func
    for func in (cmd_gen, cmd_prep, cmd_train, cmd_stats, cmd_embed, cmd_eval, cmd_predict)
}


def pipeline(config: RunConfig, threads: int = 1, generate: bool = True) -> list[Path]:
    """Every stage in order; the manifest is started afresh so it covers exactly this run."""
    RunLayout.of(config).manifest.unlink(missing_ok=True)
    outputs = []
    for name, func in STAGE_FUNCTIONS.items():
        if name == "gen" and not generate:
            continue
        outputs.extend(func(config, threads))
    return outputs


class PipelineService:

    @staticmethod
    def run_stage(name: str, config: RunConfig, threads: int = 1) -> list[Path]:
        if name not in STAGE_FUNCTIONS:
            raise ConfigError(f"Unknown stage '{name}'; expected one of {list(STAGE_FUNCTIONS)}")
        return STAGE_FUNCTIONS[name](config, threads)

    @staticmethod
    def run_pipeline(config: RunConfig, threads: int = 1, generate: bool = True) -> list[Path]:
        return pipeline(config, threads, generate)
