"""Datasets: IDX ingestion, synthetic data, pollution mixing and label oracle."""

from .datasets import (
    NO_LABEL,
    ROLES,
    Dataset,
    LabelOracle,
    blob_centers,
    export_idx,
    find_mnist_dir,
    load_idx,
    load_mnist,
    make_polluted_public,
    oracle_label,
    synth_blobs,
    synth_noise_images,
    write_manifest,
)
from .idx import IMAGES_MAGIC, LABELS_MAGIC, read_idx, write_idx

__all__ = [
    "IMAGES_MAGIC",
    "LABELS_MAGIC",
    "NO_LABEL",
    "ROLES",
    "Dataset",
    "LabelOracle",
    "blob_centers",
    "export_idx",
    "find_mnist_dir",
    "load_idx",
    "load_mnist",
    "make_polluted_public",
    "oracle_label",
    "read_idx",
    "synth_blobs",
    "synth_noise_images",
    "write_idx",
    "write_manifest",
]
