"""IDX files, labelled datasets, normalization and k-NN evaluation."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import RepresentationSet
from .errors import ConsistencyError, FormatError, ParameterError

log = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


# --- IDX -----------------------------------------------------------------------

def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise OSError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise OSError(f"{path}: truncated dimension record")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(shape))
    if len(raw) - header < size:
        raise OSError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(shape)


def write_idx(path, array: np.ndarray):
    """Write a uint8 array as IDX (3-D image stack or 1-D label vector)."""
    array = np.asarray(array)
    if array.ndim == 3:
        magic = IMAGES_MAGIC
    elif array.ndim == 1:
        magic = LABELS_MAGIC
    else:
        raise ParameterError("IDX writer supports image stacks (3-D) and labels (1-D)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.astype(np.uint8).tobytes())


@dataclass
class LabeledDataset:
    """Images as columns of an ``(M_0, N)`` float matrix with integer labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[1] != self.labels.size:
            raise ConsistencyError(f"{self.images.shape[1]} images but {self.labels.size} labels")
        if self.labels.size and self.labels.min() < 0:
            raise ConsistencyError("labels must be nonnegative")

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def balanced(self, per_class: int | None = None) -> LabeledDataset:
        """Keep the first ``per_class`` samples of each class (by original index),
        sorted class by class. Defaults to the smallest class count."""
        hist = self.histogram
        present = np.flatnonzero(hist)
        if present.size != hist.size:
            raise ConsistencyError(f"classes {np.flatnonzero(hist == 0).tolist()} are empty")
        k = int(hist.min()) if per_class is None else per_class
        if k > hist.min():
            raise ConsistencyError(f"cannot take {k} per class; smallest class has {hist.min()}")
        keep = np.concatenate([np.flatnonzero(self.labels == c)[:k] for c in range(hist.size)])
        return LabeledDataset(self.images[:, keep], self.labels[keep])

    def representation(self) -> RepresentationSet:
        """Class-major view; requires a balanced, class-sorted dataset."""
        hist = self.histogram
        if hist.size == 0 or np.any(hist != hist[0]):
            raise ConsistencyError("dataset is not balanced")
        if np.any(np.diff(self.labels) < 0):
            raise ConsistencyError("dataset is not sorted by class")
        return RepresentationSet(self.images, hist.size, int(hist[0]))


def load_idx(images_path, labels_path) -> LabeledDataset:
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1).T
    return LabeledDataset(flat, labels)


def normalize(X: np.ndarray) -> np.ndarray:
    """Scale every column to unit sample variance (no centring).

    Constant columns become zero.
    """
    X = np.asarray(X, dtype=np.float64)
    std = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
    constant = ~(std > 0)
    if constant.any():
        log.warning("%d constant column(s) set to zero", int(constant.sum()))
    out = np.zeros_like(X)
    out[:, ~constant] = X[:, ~constant] / std[~constant]
    return out


def normalize_dataset(ds: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(normalize(ds.images), ds.labels)


# --- k-NN ----------------------------------------------------------------------

def pairwise_sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between columns of ``A`` and of ``B``, ``(nA, nB)``."""
    d = (A * A).sum(0)[:, None] + (B * B).sum(0)[None, :] - 2.0 * A.T @ B
    return np.maximum(d, 0.0)


def knn_predict(train_reps, train_labels, test_reps, k: int, chunk: int = 512) -> np.ndarray:
    """Majority vote over the ``k`` nearest training columns.

    Ties go to the class with the smallest mean distance among the tied
    classes' neighbours, then to the lowest class index.
    """
    train_labels = np.asarray(train_labels)
    n_train = train_labels.size
    if k < 1 or k > n_train:
        raise ParameterError(f"k={k} must lie in 1..{n_train}")
    num_classes = int(train_labels.max()) + 1
    out = np.empty(test_reps.shape[1], dtype=np.int64)
    for start in range(0, test_reps.shape[1], chunk):
        block = test_reps[:, start:start + chunk]
        dist = np.sqrt(pairwise_sq_distances(train_reps, block)).T      # (b, n_train)
        # stable order so equal distances resolve by training index
        nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
        for i, idx in enumerate(nearest):
            labs = train_labels[idx]
            votes = np.bincount(labs, minlength=num_classes)
            tied = np.flatnonzero(votes == votes.max())
            if tied.size > 1:
                means = np.array([dist[i, idx[labs == c]].mean() for c in tied])
                tied = tied[means == means.min()]
            out[start + i] = tied[0]
    return out


def knn_evaluate(train_reps, train_labels, test_reps, test_labels, k: int = 3) -> float:
    """Fraction of test columns whose k-NN prediction matches ``test_labels``."""
    test_labels = np.asarray(test_labels)
    if test_reps.shape[1] != test_labels.size:
        raise ConsistencyError("test representations and labels disagree in count")
    if train_reps.shape[0] != test_reps.shape[0]:
        raise ConsistencyError("train and test representations differ in dimension")
    pred = knn_predict(train_reps, train_labels, test_reps, k)
    return float(np.mean(pred == test_labels))


# --- synthetic data ------------------------------------------------------------

def gaussian_classes(dim: int, num_classes: int, per_class: int, seed: int = 0,
                     separation: float = 3.0, spread: float = 1.0) -> RepresentationSet:
    """Isotropic Gaussian clusters with means ``separation`` apart on average."""
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((dim, num_classes)) * separation / np.sqrt(2 * dim)
    cols = [means[:, [c]] + spread / np.sqrt(dim) * rng.standard_normal((dim, per_class))
            for c in range(num_classes)]
    return RepresentationSet(np.hstack(cols), num_classes, per_class)
