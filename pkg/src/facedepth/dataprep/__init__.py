"""Dataset ingestion, face cropping, subset partitions and synthetic faces."""

from .io import DatasetError, read_dataset, read_pairs, read_pgm, write_dataset, write_pairs, write_pgm
from .samples import (
    DEFAULT_DEPTH_RANGE,
    PANDORA_TEST_SUBJECTS,
    CropParams,
    FaceSample,
    UnusableSampleError,
    VerificationPair,
    angle_subset,
    build_pair_set,
    crop_box,
    crop_extent,
    denormalize_depth,
    denormalize_gray,
    depth_to_8bit,
    estimate_head_distance,
    face_crop,
    normalize_depth,
    normalize_gray,
    sequence_subset,
    split_train_test,
)
from .synth import subject_geometry, synth_face_dataset, synth_focal

__all__ = [
    "DEFAULT_DEPTH_RANGE",
    "PANDORA_TEST_SUBJECTS",
    "CropParams",
    "DatasetError",
    "FaceSample",
    "UnusableSampleError",
    "VerificationPair",
    "angle_subset",
    "build_pair_set",
    "crop_box",
    "crop_extent",
    "denormalize_depth",
    "denormalize_gray",
    "depth_to_8bit",
    "estimate_head_distance",
    "face_crop",
    "normalize_depth",
    "normalize_gray",
    "read_dataset",
    "read_pairs",
    "read_pgm",
    "sequence_subset",
    "split_train_test",
    "subject_geometry",
    "synth_face_dataset",
    "synth_focal",
    "write_dataset",
    "write_pairs",
    "write_pgm",
]
