from .cohort_io import (
    load_cohort,
    write_cohort,
    load_followup,
    load_feature_schema,
    write_feature_schema,
    load_reference_ranges,
    write_reference_ranges,
)
from .artifacts import (
    FORMAT_VERSIONS,
    require,
    serialize_checkpoint,
    parse_checkpoint,
    save_checkpoint,
    load_checkpoint,
    serialize_transform,
    parse_transform,
    save_transform,
    load_transform,
    save_triplets,
    load_triplets,
    save_splits,
    load_splits,
    save_frame,
    load_frame,
    file_digest,
    save_json,
    save_manifest,
    load_manifest,
)

__all__ = [
    "load_cohort",
    "write_cohort",
    "load_followup",
    "load_feature_schema",
    "write_feature_schema",
    "load_reference_ranges",
    "write_reference_ranges",
    "FORMAT_VERSIONS",
    "require",
    "serialize_checkpoint",
    "parse_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "serialize_transform",
    "parse_transform",
    "save_transform",
    "load_transform",
    "save_triplets",
    "load_triplets",
    "save_splits",
    "load_splits",
    "save_frame",
    "load_frame",
    "file_digest",
    "save_json",
    "save_manifest",
    "load_manifest",
]
