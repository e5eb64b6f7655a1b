import hashlib
import io
import json
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError

from ..models.cohort import QuantileTransform, SplitIndices, TripletSet
from ..models.network import GLOROT_UNIFORM, DenseLayer, MlpParams
from ..schemas.result_schemas import RunManifest
from ..utils.errors import IngestionError, StageDependencyError

CHECKPOINT_MAGIC = "TCEMB1"
TRANSFORM_MAGIC = "TCQN1"
FORMAT_VERSIONS = {"checkpoint": CHECKPOINT_MAGIC, "transform": TRANSFORM_MAGIC, "manifest": "1"}


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _line(values) -> str:
    return " ".join(_fmt(float(v)) for v in values)


def _prepare(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise StageDependencyError(path)
    return path


def serialize_checkpoint(params: MlpParams) -> str:
    lines = [CHECKPOINT_MAGIC, f"{params.n_inputs} {params.output_dim} init={params.init}"]
    for k, layer in enumerate(params.layers):
        rows, cols = layer.weight.shape
        lines.append(f"layer {k} {rows} {cols}")
        lines.extend(_line(row) for row in layer.weight)
        lines.append(_line(layer.bias))
        lines.append(_line(layer.slope))
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str) -> MlpParams:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise IngestionError(f"Checkpoint does not start with {CHECKPOINT_MAGIC}", row=1)
    try:
        header = lines[1].split()
        n_inputs, output_dim = int(header[0]), int(header[1])
        init = GLOROT_UNIFORM
        for token in header[2:]:
            key, _, value = token.partition("=")
            if key != "init" or not value:
                raise IngestionError(f"Unknown checkpoint header field '{token}'", row=2)
            init = value
        layers = []
        cursor = 2
        while cursor < len(lines) and lines[cursor].strip():
            tag, index, rows, cols = lines[cursor].split()
            if tag != "layer" or int(index) != len(layers):
                raise IngestionError(f"Expected 'layer {len(layers)}' header", row=cursor + 1)
            rows, cols = int(rows), int(cols)
            weight = np.array(
                [[float(v) for v in lines[cursor + 1 + r].split()] for r in range(rows)],
                dtype=np.float64,
            ).reshape(rows, cols)
            bias = np.array([float(v) for v in lines[cursor + 1 + rows].split()], dtype=np.float64)
            slope = np.array([float(v) for v in lines[cursor + 2 + rows].split()], dtype=np.float64)
            layers.append(DenseLayer(weight, bias, slope))
            cursor += rows + 3
    except IngestionError:
        raise
    except (ValueError, IndexError) as exc:
        raise IngestionError(f"Malformed checkpoint: {exc}")
    params = MlpParams(layers, init=init)
    if params.n_inputs != n_inputs or params.output_dim != output_dim:
        raise IngestionError(
            f"Checkpoint header says {n_inputs}x{output_dim}, layers give "
            f"{params.n_inputs}x{params.output_dim}",
            row=2,
        )
    return params


def save_checkpoint(params: MlpParams, path) -> Path:
    path = _prepare(path)
    path.write_text(serialize_checkpoint(params), encoding="utf-8")
    return path


def load_checkpoint(path) -> MlpParams:
    return parse_checkpoint(require(path).read_text(encoding="utf-8"))


def serialize_transform(transform: QuantileTransform) -> str:
    lines = [TRANSFORM_MAGIC, f"sex {transform.sex or '-'}"]
    for name, values in transform.quantiles.items():
        lines.append(f"feature {name} {len(values)}")
        lines.append(_line(values))
    for name in transform.skipped:
        lines.append(f"skipped {name}")
    return "\n".join(lines) + "\n"


def parse_transform(text: str) -> QuantileTransform:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRANSFORM_MAGIC:
        raise IngestionError(f"Transform sidecar does not start with {TRANSFORM_MAGIC}", row=1)
    sex = lines[1].split()[1]
    transform = QuantileTransform(sex="" if sex == "-" else sex)
    cursor = 2
    while cursor < len(lines):
        parts = lines[cursor].split()
        if not parts:
            cursor += 1
            continue
        if parts[0] == "feature":
            count = int(parts[2])
            values = np.array([float(v) for v in lines[cursor + 1].split()], dtype=np.float64)
            if len(values) != count:
                raise IngestionError(f"Feature '{parts[1]}' lists {len(values)} of {count} values", row=cursor + 2)
            transform.quantiles[parts[1]] = values
            cursor += 2
        elif parts[0] == "skipped":
            transform.skipped.append(parts[1])
            cursor += 1
        else:
            raise IngestionError(f"Unexpected line '{lines[cursor]}'", row=cursor + 1)
    return transform


def save_transform(transform: QuantileTransform, path) -> Path:
    path = _prepare(path)
    path.write_text(serialize_transform(transform), encoding="utf-8")
    return path


def load_transform(path) -> QuantileTransform:
    return parse_transform(require(path).read_text(encoding="utf-8"))


def save_triplets(triplets: TripletSet, path) -> Path:
    """One 'anchor,positive,negative' line per triplet, no header."""
    path = _prepare(path)
    pd.DataFrame(triplets.triplets).to_csv(path, index=False, header=False, lineterminator="\n")
    return path


def load_triplets(path, split: str = "train", seed: int = 0) -> TripletSet:
    path = require(path)
    if path.stat().st_size == 0:
        return TripletSet(np.zeros((0, 3), dtype=np.int64), split=split, seed=seed)
    frame = pd.read_csv(path, header=None)
    if frame.shape[1] != 3:
        raise IngestionError(f"Triplet file {path} must have three columns")
    return TripletSet(frame.to_numpy(dtype=np.int64), split=split, seed=seed)


def save_splits(splits: SplitIndices, path) -> Path:
    path = _prepare(path)
    splits.assignment().to_csv(path, index=False, lineterminator="\n")
    return path


def load_splits(path) -> SplitIndices:
    frame = pd.read_csv(require(path))
    return SplitIndices(
        train=frame.loc[frame["split"] == "train", "id"].to_numpy(),
        val=frame.loc[frame["split"] == "val", "id"].to_numpy(),
        test=frame.loc[frame["split"] == "test", "id"].to_numpy(),
    )


def save_frame(frame: pd.DataFrame, path) -> Path:
    path = _prepare(path)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def load_frame(path) -> pd.DataFrame:
    return pd.read_csv(require(path))


def file_digest(path, ignore_columns: tuple[str, ...] = ()) -> str:
    """SHA-256 of a file; for CSVs, `ignore_columns` are dropped before hashing."""
    path = Path(path)
    if not ignore_columns:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    frame = pd.read_csv(path)
    frame = frame.drop(columns=[c for c in ignore_columns if c in frame.columns])
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return hashlib.sha256(buffer.getvalue().encode("utf-8")).hexdigest()


def save_json(payload: dict, path) -> Path:
    path = _prepare(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def save_manifest(manifest: RunManifest, path) -> Path:
    return save_json(manifest.model_dump(mode="json"), path)


def load_manifest(path) -> RunManifest:
    text = require(path).read_text(encoding="utf-8")
    try:
        return RunManifest.model_validate_json(text)
    except ValidationError as exc:
        raise IngestionError(f"Run manifest {path} is malformed ({exc.error_count()} problems)")
