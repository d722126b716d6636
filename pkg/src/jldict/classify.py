"""Coefficient medoids and the medoid-distance classification rule.

A query q is projected (z), sparse coded against the shared dictionary (x),
and assigned to

    argmin_c  |z - D x|^2 + tau |x - m_c|^2

where m_c is the medoid of class c's training codes. The first term does
not depend on c, so for any tau > 0 the winner is the nearest medoid in
coefficient space; the scores themselves still depend on tau.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .embed import ProjectionModel, transform
from .errors import InvalidArgument
from .sparse import SparseCoderConfig, code_single

DEFAULT_TAU = 0.35
# distance sums this close (relative) count as tied, so the lowest index wins
# regardless of summation order
TIE_RTOL = 1e-12


def _tied_argmin(sums) -> int:
    sums = np.asarray(sums, dtype=np.float64)
    lo = sums.min()
    return int(np.flatnonzero(sums <= lo + TIE_RTOL * max(abs(lo), 1e-300))[0])


@dataclass
class _ClassState:
    members: list
    sums: list
    medoid: int

    def medoid_vector(self):
        return self.members[self.medoid]


@dataclass
class ClassMedoids:
    """Per-class coefficient members, their distance sums, and the medoid.

    Mutated in place by :func:`update_medoid_online`; callers sharing an
    instance across threads must serialize writes.
    """
    classes: dict = field(default_factory=dict)
    dim: int = 0

    @property
    def labels(self):
        return sorted(self.classes)

    def medoid(self, c) -> np.ndarray:
        return self.classes[c].medoid_vector()

    def matrix(self) -> np.ndarray:
        """Medoids stacked as rows in ascending class order (C x K)."""
        return np.array([self.medoid(c) for c in self.labels]).reshape(-1, self.dim)

    def copy(self) -> "ClassMedoids":
        return ClassMedoids({c: _ClassState([m.copy() for m in s.members], list(s.sums),
                                            s.medoid)
                             for c, s in self.classes.items()}, self.dim)


def compute_medoids(X, labels, n_classes: int | None = None) -> ClassMedoids:
    """Offline medoid of each class: the member with the smallest total
    Euclidean distance to the other members, lowest column index on ties.

    With ``n_classes`` given, every class in ``range(n_classes)`` must have a
    member.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or labels.shape != (X.shape[1],):
        raise InvalidArgument("X must be K x N with one label per column")
    present = np.unique(labels)
    if n_classes is not None:
        missing = sorted(set(range(n_classes)) - set(present.tolist()))
        if missing:
            raise InvalidArgument(f"class {missing[0]} has no members")
    out = ClassMedoids(dim=X.shape[0])
    for c in present:
        idx = np.flatnonzero(labels == c)
        members = X[:, idx].T
        dist = cdist(members, members)
        sums = dist.sum(axis=1)
        out.classes[c.item()] = _ClassState([m.copy() for m in members],
                                            sums.tolist(), _tied_argmin(sums))
    return out


def update_medoid_online(medoids: ClassMedoids, x_new, c) -> ClassMedoids:
    """Add one code to class ``c`` and swap the medoid if the new point, or
    any member after the update, now has the smallest distance sum."""
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.shape != (medoids.dim,):
        raise InvalidArgument(f"expected a vector of length {medoids.dim}, got {x_new.shape}")
    if c not in medoids.classes:
        raise InvalidArgument(f"unknown class {c!r}")
    state = medoids.classes[c]
    dists = cdist(np.array(state.members), x_new[None, :])[:, 0].tolist()
    state.sums = [s + d for s, d in zip(state.sums, dists)]
    state.members.append(x_new.copy())
    state.sums.append(float(np.sum(dists)))
    state.medoid = _tied_argmin(state.sums)
    return medoids


@dataclass
class ClassifierModel:
    projection: ProjectionModel
    dictionary: np.ndarray
    medoids: ClassMedoids
    tau: float = DEFAULT_TAU
    coder: SparseCoderConfig = field(default_factory=SparseCoderConfig)
    # preprocessing applied to raw queries before projection
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    # multiplies projected features; 1.0 keeps Z = U^T Y as is
    feature_scale: float = 1.0
    class_names: list | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidArgument(f"tau must be positive, got {self.tau!r}")

    def project(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.float64)
        d = self.projection.input_dim
        if Y.shape[0] != d:
            raise InvalidArgument(f"queries have {Y.shape[0]} features, model expects {d}")
        if self.mean is not None:
            Y = (Y - self.mean.reshape((-1,) + (1,) * (Y.ndim - 1))) \
                / self.scale.reshape((-1,) + (1,) * (Y.ndim - 1))
        return self.feature_scale * transform(self.projection, Y)


def encode(model: ClassifierModel, Yq) -> tuple[np.ndarray, np.ndarray]:
    """Projected features and codes of query columns, each coded on its own."""
    Yq = np.asarray(Yq, dtype=np.float64)
    if Yq.ndim != 2:
        raise InvalidArgument("queries must be a d x M matrix")
    Z = model.project(Yq)
    X = np.zeros((model.dictionary.shape[1], Yq.shape[1]))
    for i in range(Yq.shape[1]):
        X[:, i] = code_single(model.dictionary, Z[:, i], model.coder)
    return Z, X


def predict_codes(model: ClassifierModel, Z, X, tau: float | None = None):
    """Labels and scores (M x C) for already encoded queries."""
    tau = model.tau if tau is None else tau
    if not tau > 0:
        raise InvalidArgument(f"tau must be positive, got {tau!r}")
    R = Z - model.dictionary @ X
    recon = np.einsum("ij,ij->j", R, R)
    M = model.medoids.matrix()
    dist = np.array([np.einsum("ij,ij->j", X - m[:, None], X - m[:, None]) for m in M]).T
    dist = dist.reshape(X.shape[1], M.shape[0])
    S = recon[:, None] + tau * dist
    ids = np.asarray(model.medoids.labels)
    # the reconstruction term is shared by all classes; taking the argmin on
    # the distances keeps rounding in that offset from breaking ties
    return ids[np.argmin(dist, axis=1)] if S.shape[1] else np.zeros(0, int), S


def classify(model: ClassifierModel, q) -> tuple[int, np.ndarray]:
    """Predicted class id and the scores of all classes in ascending id order."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise InvalidArgument("query must be a vector")
    Z, X = encode(model, q[:, None])
    labels, S = predict_codes(model, Z, X)
    return int(labels[0]), S[0]


def classify_batch(model: ClassifierModel, Yq):
    Z, X = encode(model, Yq)
    return predict_codes(model, Z, X)


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    confusion: np.ndarray
    seconds_per_sample: float


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def metrics_from_confusion(cm, seconds_per_sample: float = float("nan")) -> Metrics:
    """Rows are true classes, columns predictions. Undefined ratios count as 0.

    Macro-F1 averages over classes that appear in either truth or predictions.
    """
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred > 0, tp / pred, 0.0)
        recall = np.where(true > 0, tp / true, 0.0)
        f1 = np.where(precision + recall > 0,
                      2 * precision * recall / (precision + recall), 0.0)
    seen = (pred + true) > 0
    total = cm.sum()
    return Metrics(float(tp.sum() / total) if total else float("nan"),
                   float(f1[seen].mean()) if seen.any() else float("nan"),
                   precision, recall, cm.astype(np.int64), seconds_per_sample)


def evaluate(model: ClassifierModel, Yt, labels) -> Metrics:
    Yt = np.asarray(Yt, dtype=np.float64)
    labels = np.asarray(labels)
    if Yt.ndim != 2 or labels.shape != (Yt.shape[1],):
        raise InvalidArgument("need one label per test column")
    if Yt.shape[1] < 1:
        raise InvalidArgument("empty test set")
    t0 = time.perf_counter()
    pred, _ = classify_batch(model, Yt)
    elapsed = (time.perf_counter() - t0) / Yt.shape[1]
    n = max(int(labels.max()), int(pred.max()), max(model.medoids.labels)) + 1
    return metrics_from_confusion(confusion_matrix(labels, pred, n), elapsed)
