"""Dataset container, loaders, synthetic generators and the label oracle."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import BudgetError, ConsistencyError, DimensionError, LabelError, ParameterError
from ..numerics import as_matrix, seeded_rng
from .idx import IMAGES_MAGIC, LABELS_MAGIC, read_idx, write_idx

ROLES = ("private_train", "test", "public")
NO_LABEL = -1  # label of a pollution example with no ground truth

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    role: str = "private_train"
    pollution: np.ndarray | None = None  # True where the example is pollution
    num_classes: int = 10

    def __post_init__(self):
        features = as_matrix(self.features, "features")
        object.__setattr__(self, "features", features)
        n = features.shape[0]
        if self.role not in ROLES:
            raise ParameterError(f"role must be one of {ROLES}, got {self.role!r}")
        pollution = np.zeros(n, dtype=bool) if self.pollution is None else np.asarray(self.pollution, dtype=bool)
        if pollution.shape != (n,):
            raise DimensionError("pollution flags must have one entry per example")
        object.__setattr__(self, "pollution", pollution)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ConsistencyError(f"{n} examples but {labels.shape[0]} labels")
            clean = labels[~pollution]
            if clean.size and (clean.min() < 0 or clean.max() >= self.num_classes):
                raise LabelError(f"labels must lie in [0, {self.num_classes})")
            if np.any(labels[pollution] < NO_LABEL) or np.any(labels >= self.num_classes):
                raise LabelError("pollution labels must be -1 or a valid class")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def provenance(self) -> np.ndarray:
        return np.where(self.pollution, "pollution", "clean")

    @property
    def pollution_fraction(self) -> float:
        return float(self.pollution.mean()) if len(self) else 0.0

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            features=self.features[indices],
            labels=None if self.labels is None else self.labels[indices],
            pollution=self.pollution[indices],
        )

    def with_role(self, role) -> "Dataset":
        return replace(self, role=role)

    def without_labels(self) -> "Dataset":
        return replace(self, labels=None)

    def manifest(self, path=None) -> dict:
        return {
            "path": None if path is None else str(path),
            "role": self.role,
            "num_examples": len(self),
            "dim": self.dim,
            "pollution_fraction": self.pollution_fraction,
        }


def load_idx(images_path, labels_path=None, role="private_train", num_classes=10) -> Dataset:
    """Read IDX images (and optional labels); pixels are scaled by 1/255."""
    images = read_idx(images_path, expected_magic=IMAGES_MAGIC)
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path, expected_magic=LABELS_MAGIC).astype(np.int64)
        if labels.shape[0] != images.shape[0]:
            raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return Dataset(features, labels, role=role, num_classes=num_classes)


def export_idx(dataset: Dataset, images_path, labels_path=None, image_shape=None) -> None:
    """Write features (rounded to bytes) and labels back to IDX files."""
    if image_shape is None:
        side = int(round(np.sqrt(dataset.dim)))
        image_shape = (side, side) if side * side == dataset.dim else (1, dataset.dim)
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    write_idx(images_path, pixels.reshape(len(dataset), *image_shape))
    if labels_path is not None:
        if dataset.labels is None:
            raise ConsistencyError("dataset has no labels to export")
        write_idx(labels_path, dataset.labels.astype(np.uint8))


def find_mnist_dir(directory=None) -> Path | None:
    """Locate a directory holding the four MNIST IDX files (optionally gzipped)."""
    candidates = []
    if directory:
        candidates.append(Path(directory))
    if os.environ.get("DPAL_MNIST_DIR"):
        candidates.append(Path(os.environ["DPAL_MNIST_DIR"]))
    candidates.append(Path(__file__).resolve().parents[3] / "data" / "mnist")
    for cand in candidates:
        if all(_mnist_file(cand, name) is not None for name in MNIST_FILES.values()):
            return cand
    return None


def _mnist_file(directory, name):
    for suffix in ("", ".gz"):
        path = Path(directory) / (name + suffix)
        if path.exists():
            return path
    return None


def load_mnist(directory=None, n_public=10000, split_seed=0):
    """MNIST as (private_train, public, test).

    ``n_public`` training images, chosen by a seeded permutation, are held out
    as the public pool; DP training never sees them.
    """
    root = find_mnist_dir(directory)
    if root is None:
        raise FileNotFoundError("MNIST IDX files not found; set DPAL_MNIST_DIR or run scripts/fetch_mnist.sh")
    train = load_idx(_mnist_file(root, MNIST_FILES["train_images"]), _mnist_file(root, MNIST_FILES["train_labels"]))
    test = load_idx(
        _mnist_file(root, MNIST_FILES["test_images"]), _mnist_file(root, MNIST_FILES["test_labels"]), role="test"
    )
    if not 0 <= n_public < len(train):
        raise ParameterError(f"n_public={n_public} out of range")
    perm = seeded_rng(split_seed).permutation(len(train))
    public = train.subset(np.sort(perm[:n_public])).with_role("public")
    private = train.subset(np.sort(perm[n_public:])).with_role("private_train")
    return private, public, test


def blob_centers(num_classes, dim, separation=10.0) -> np.ndarray:
    """Vertices of a regular simplex with pairwise distance ``separation``, centred at 0."""
    if num_classes < 2:
        raise ParameterError("num_classes must be >= 2")
    if dim < num_classes - 1:
        raise ParameterError(f"dim={dim} cannot hold a {num_classes}-vertex simplex")
    eye = np.eye(num_classes)
    centered = eye - eye.mean(axis=0)
    # orthonormal coordinates of the simplex inside its (num_classes - 1)-dim span
    u, _, _ = np.linalg.svd(centered.T, full_matrices=False)
    coords = centered @ u[:, : num_classes - 1]
    coords *= separation / np.sqrt(2.0)
    out = np.zeros((num_classes, dim))
    out[:, : num_classes - 1] = coords
    return out


def synth_blobs(num_classes, per_class, dim, spread, seed, separation=10.0, role="private_train") -> Dataset:
    """Isotropic Gaussian classes around simplex vertices, shuffled."""
    rng = seeded_rng(seed)
    centers = blob_centers(num_classes, dim, separation)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = centers[labels] + spread * rng.standard_normal((len(labels), dim))
    order = rng.permutation(len(labels))
    return Dataset(features[order], labels[order], role=role, num_classes=num_classes)


def synth_noise_images(n, side=28, seed=0, beta=2.0, num_classes=10) -> Dataset:
    """Unlabelled pollution images: grey-scale textures with a 1/f^(beta/2) spectrum.

    Random Fourier phases shaped by a power-law amplitude give smooth,
    full-frame structure with the second-order statistics of natural photos,
    unrelated to any digit.  Each image is min-max scaled to [0, 1] and
    quantised to 8-bit levels.
    """
    rng = seeded_rng(seed)
    f = np.fft.fftfreq(side)
    radius = np.hypot(*np.meshgrid(f, f))
    radius[0, 0] = 1.0
    amplitude = radius ** (-beta / 2.0)
    amplitude[0, 0] = 0.0  # no DC term; brightness comes from the rescaling
    spectrum = rng.standard_normal((n, side, side)) + 1j * rng.standard_normal((n, side, side))
    images = np.real(np.fft.ifft2(spectrum * amplitude))
    lo = images.min(axis=(1, 2), keepdims=True)
    hi = images.max(axis=(1, 2), keepdims=True)
    images = (images - lo) / np.where(hi > lo, hi - lo, 1.0)
    pixels = np.rint(images * 255.0) / 255.0
    return Dataset(
        pixels.reshape(n, side * side),
        np.full(n, NO_LABEL),
        role="public",
        pollution=np.ones(n, dtype=bool),
        num_classes=num_classes,
    )


def make_polluted_public(clean: Dataset, pollution: Dataset, rng) -> Dataset:
    """Shuffle clean and pollution examples into one public pool, keeping provenance."""
    if len(pollution) and clean.dim != pollution.dim:
        raise DimensionError(f"clean dim {clean.dim} != pollution dim {pollution.dim}")
    rng = seeded_rng(rng)
    features = np.vstack([clean.features, pollution.features.reshape(len(pollution), clean.dim)])
    flags = np.concatenate([clean.pollution, np.ones(len(pollution), dtype=bool)])
    labels = None
    if clean.labels is not None:
        extra = pollution.labels if pollution.labels is not None else np.full(len(pollution), NO_LABEL)
        labels = np.concatenate([clean.labels, extra])
    order = rng.permutation(len(features))
    return Dataset(
        features[order],
        None if labels is None else labels[order],
        role="public",
        pollution=flags[order],
        num_classes=clean.num_classes,
    )


@dataclass
class LabelOracle:
    """Reveals hidden labels of a public pool, up to ``budget`` of them.

    Pollution examples get a seeded uniformly random class under the
    ``"random"`` policy, or are dropped from the returned subset under
    ``"exclude"``; either way they count against the budget.
    """

    pool: Dataset
    budget: int
    pollution_policy: str = "random"
    seed: int = 0
    queries: int = 0
    _rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.pool.labels is None:
            raise ConsistencyError("the oracle needs ground-truth labels for its pool")
        if self.pollution_policy not in ("random", "exclude"):
            raise ParameterError("pollution_policy must be 'random' or 'exclude'")
        if self._rng is None:
            self._rng = seeded_rng(self.seed)

    @property
    def remaining(self) -> int:
        return self.budget - self.queries


def oracle_label(oracle: LabelOracle, indices) -> Dataset:
    """Labelled subset of the oracle's pool at ``indices``."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= len(oracle.pool)):
        raise ParameterError("label request outside the public pool")
    if oracle.queries + len(indices) > oracle.budget:
        raise BudgetError(
            f"requesting {len(indices)} labels with {oracle.remaining} of {oracle.budget} remaining"
        )
    oracle.queries += len(indices)
    subset = oracle.pool.subset(indices)
    labels = subset.labels.copy()
    flagged = subset.pollution
    if oracle.pollution_policy == "random":
        labels[flagged] = oracle._rng.integers(0, subset.num_classes, size=int(flagged.sum()))
        return replace(subset, labels=labels)
    keep = ~flagged
    return replace(subset, features=subset.features[keep], labels=labels[keep], pollution=flagged[keep])


def write_manifest(dataset: Dataset, path, data_path=None) -> None:
    Path(path).write_text(json.dumps(dataset.manifest(data_path), indent=2))
