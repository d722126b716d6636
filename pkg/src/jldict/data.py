"""Datasets: loading, standardization, splits and synthetic data.

Samples are columns: ``Y`` has shape (d, N).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledDataset:
    Y: np.ndarray
    labels: np.ndarray
    n_classes: int
    standardized: bool = False
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    # original label value for each dense class id
    label_names: tuple | None = None

    def __post_init__(self):
        if self.Y.ndim != 2:
            raise InvalidArgument(f"Y must be 2-D, got shape {self.Y.shape}")
        if self.labels.shape != (self.Y.shape[1],):
            raise InvalidArgument(
                f"{self.Y.shape[1]} samples but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidArgument(f"labels must lie in [0, {self.n_classes})")

    @property
    def d(self) -> int:
        return self.Y.shape[0]

    @property
    def n_samples(self) -> int:
        return self.Y.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return replace(self, Y=self.Y[:, idx], labels=self.labels[idx])


# --- IDX -------------------------------------------------------------------

def _read_idx(path, expected_magic):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ParseError(f"{path}: file too short for IDX magic", offset=len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise ParseError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}",
                         offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"{path}: truncated dimension header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + count:
        raise ParseError(f"{path}: truncated payload, need {count} bytes", offset=len(raw))
    if len(raw) > header + count:
        raise ParseError(f"{path}: {len(raw) - header - count} trailing bytes",
                         offset=header + count)
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return dims, data


def load_idx_images(path) -> np.ndarray:
    """Images as a d x N matrix scaled to [0, 1]."""
    dims, data = _read_idx(path, IDX_IMAGES_MAGIC)
    n = dims[0]
    return data.reshape(n, -1).T.astype(np.float64) / 255.0


def load_idx(images_path, labels_path) -> LabeledDataset:
    Y = load_idx_images(images_path)
    dims, raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if dims[0] != Y.shape[1]:
        raise ParseError(f"{labels_path}: {dims[0]} labels for {Y.shape[1]} images", offset=4)
    labels, names = reindex_labels(raw_labels.tolist())
    return LabeledDataset(Y, labels, len(names), label_names=tuple(names))


def write_idx(images_path, labels_path, images, labels) -> None:
    """Write uint8 images (N x rows x cols) and labels (N,) in IDX format."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3 or labels.shape != (images.shape[0],):
        raise InvalidArgument("images must be N x rows x cols with N labels")
    if images.dtype != np.uint8 or labels.dtype != np.uint8:
        raise InvalidArgument("IDX payloads must be uint8")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(np.ascontiguousarray(images).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


# --- CSV -------------------------------------------------------------------

def reindex_labels(raw) -> tuple[np.ndarray, list]:
    """Dense ids in order of first appearance, plus the original values."""
    mapping = {}
    ids = np.empty(len(raw), dtype=np.int64)
    for i, v in enumerate(raw):
        ids[i] = mapping.setdefault(v, len(mapping))
    return ids, list(mapping)


def _parse_label(text):
    try:
        value = float(text)
    except ValueError:
        return text
    return int(value) if value.is_integer() else value


def read_csv_matrix(path, label_column: str | None = None):
    """Rows of a headed numeric CSV as (features d x N, raw labels or None, header)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: missing header", line=1) from None
        header = [h.strip() for h in header]
        lab_idx = None
        if label_column is not None:
            if label_column not in header:
                raise ParseError(f"{path}: no column named {label_column!r}", line=1)
            lab_idx = header.index(label_column)
        rows, raw_labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}",
                                 line=lineno)
            values = []
            for j, cell in enumerate(row):
                if j == lab_idx:
                    raw_labels.append(_parse_label(cell.strip()))
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}: non-numeric value {cell!r} in column "
                                     f"{header[j]!r}", line=lineno) from None
            rows.append(values)
    d = len(header) - (lab_idx is not None)
    Y = np.array(rows, dtype=np.float64).reshape(-1, d).T
    return Y, (raw_labels if lab_idx is not None else None), header


def load_csv(features_path, label_column: str = "label") -> LabeledDataset:
    Y, raw, _ = read_csv_matrix(features_path, label_column)
    labels, names = reindex_labels(raw)
    return LabeledDataset(Y, labels, len(names), label_names=tuple(names))


# --- preprocessing ---------------------------------------------------------

def standardization_stats(Y) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and population std; constant features get std 1."""
    mean = Y.mean(axis=1)
    std = Y.std(axis=1)
    # a feature that is constant up to rounding still counts as constant
    std[std <= 1e-12 * np.maximum(np.abs(mean), 1.0)] = 1.0
    return mean, std


def apply_standardization(Y, mean, std) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    return (Y - mean[:, None]) / std[:, None]


def standardize(ds: LabeledDataset) -> LabeledDataset:
    if ds.n_samples < 2:
        raise InvalidArgument("standardization needs at least two samples")
    mean, std = standardization_stats(ds.Y)
    Y = apply_standardization(ds.Y, mean, std)
    constant = std == 1.0
    Y[constant & (np.abs(Y).max(axis=1) < 1e-9)] = 0.0
    return replace(ds, Y=Y, standardized=True, mean=mean, std=std)


# --- splits ----------------------------------------------------------------

def stratified_kfold(ds_or_labels, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, test) index arrays for k stratified folds.

    Each class is shuffled and dealt round-robin, starting where the previous
    class stopped so fold sizes stay balanced as well.
    """
    labels = ds_or_labels.labels if isinstance(ds_or_labels, LabeledDataset) \
        else np.asarray(ds_or_labels)
    if k < 2:
        raise InvalidArgument(f"need at least 2 folds, got {k}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.size, dtype=np.int64)
    start = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < k:
            raise InvalidArgument(f"class {c} has {idx.size} samples, fewer than {k} folds")
        idx = rng.permutation(idx)
        fold_of[idx] = (start + np.arange(idx.size)) % k
        start = (start + idx.size) % k
    all_idx = np.arange(labels.size)
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]


# --- synthetic data and augmentation ----------------------------------------

def simplex_means(d: int, n_classes: int, separation: float, rng) -> np.ndarray:
    """d x C class means with every pairwise distance equal to ``separation``."""
    C = n_classes
    if C == 1:
        return np.zeros((d, 1))
    if d < C - 1:
        raise InvalidArgument(f"{C} equidistant means need d >= {C - 1}, got d={d}")
    # centered scaled basis vectors: pairwise distance = separation
    V = (np.eye(C) - 1.0 / C) * (separation / np.sqrt(2.0))
    B, _, _ = np.linalg.svd(np.eye(C) - 1.0 / C)
    coords = V @ B[:, : C - 1]
    Q, _ = np.linalg.qr(rng.standard_normal((d, C - 1)))
    return Q @ coords.T


def synth_clusters(d: int, n_classes: int, per_class: int, separation: float,
                   seed: int = 0) -> LabeledDataset:
    if min(d, n_classes, per_class) < 1:
        raise InvalidArgument("d, n_classes and per_class must be >= 1")
    if separation < 0:
        raise InvalidArgument("separation must be non-negative")
    rng = np.random.default_rng(seed)
    means = simplex_means(d, n_classes, separation, rng)
    labels = np.repeat(np.arange(n_classes), per_class)
    Y = means[:, labels] + rng.standard_normal((d, labels.size))
    return LabeledDataset(Y, labels, n_classes)


def augment_minority(ds: LabeledDataset, target_count: int, noise_std: float = 0.05,
                     seed: int = 0) -> LabeledDataset:
    """Top up every class below ``target_count`` with noisy copies of its members."""
    if not noise_std > 0:
        raise InvalidArgument("noise_std must be positive")
    counts = ds.class_counts()
    if np.any(counts == 0):
        raise InvalidArgument(f"class {int(np.argmin(counts))} is empty")
    rng = np.random.default_rng(seed)
    extra_Y, extra_labels = [], []
    for c in range(ds.n_classes):
        need = target_count - int(counts[c])
        if need <= 0:
            continue
        members = np.flatnonzero(ds.labels == c)
        src = rng.choice(members, size=need, replace=True)
        extra_Y.append(ds.Y[:, src] + noise_std * rng.standard_normal((ds.d, need)))
        extra_labels.append(np.full(need, c, dtype=ds.labels.dtype))
    if not extra_Y:
        return ds
    return replace(ds, Y=np.hstack([ds.Y, *extra_Y]),
                   labels=np.concatenate([ds.labels, *extra_labels]))
