"""End-to-end training and evaluation."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import dimsel
from .classify import ClassifierModel, Metrics, compute_medoids, evaluate
from .data import LabeledDataset, augment_minority, standardize, stratified_kfold
from .dictionary import TrainConfig, TrainReport, train
from .embed import fit_mkspca, fit_mspca, median_bandwidth, one_hot_labels, transform
from .errors import InvalidArgument, JLDictError
from .sparse import SparseCoderConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    epsilon: float | None = None
    p_override: int | None = None
    atoms_per_class: int = 10
    sigma2: float = 0.03
    tau: float = 0.35
    kernel_bandwidth: float | None = None
    seed: int = 0
    folds: int = 3
    augment_to: int | None = None
    augment_noise: float = 0.05
    max_outer: int = 30
    flatness_tol: float = dimsel.DEFAULT_FLATNESS_TOL
    coder_max_iters: int = 200
    coder_update: str = "fixed_point"

    def __post_init__(self):
        if self.epsilon is not None and self.p_override is not None:
            raise InvalidArgument("give either epsilon or p_override, not both")
        if self.p_override is not None and self.p_override < 1:
            raise InvalidArgument("p_override must be >= 1")

    def coder(self) -> SparseCoderConfig:
        return SparseCoderConfig(sigma2=self.sigma2, max_iters=self.coder_max_iters,
                                 update_rule=self.coder_update)

    def train_config(self) -> TrainConfig:
        return TrainConfig(atoms_per_class=self.atoms_per_class, max_outer=self.max_outer,
                           seed=self.seed, coder=self.coder())


@dataclass
class FitResult:
    model: ClassifierModel
    report: TrainReport
    codes: np.ndarray
    labels: np.ndarray
    epsilon: float
    p: int
    seconds: float = 0.0


@contextmanager
def stage(name: str):
    """Tag package errors raised inside the block with the pipeline stage."""
    try:
        yield
    except JLDictError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        raise


def resolve_dimension(n_samples: int, config: PipelineConfig) -> tuple[float, int]:
    if config.p_override is not None:
        return float("nan"), int(config.p_override)
    eps = config.epsilon
    if eps is None:
        eps = dimsel.select_epsilon(n_samples, config.flatness_tol)
    return float(eps), dimsel.jl_min_dimension(n_samples, eps)


def fit(ds: LabeledDataset, config: PipelineConfig = PipelineConfig()) -> FitResult:
    """Standardize, project, learn the dictionary and the class medoids.

    The projection is linear when the JL dimension fits in the input
    dimension and kernel (Gaussian) otherwise. Kernel-mode features have norm
    at most 1, so they are rescaled to unit mean square over the training set
    to keep ``sigma2`` on the same footing as in linear mode.
    """
    t0 = time.perf_counter()
    with stage("standardize"):
        counts = ds.class_counts()
        if np.any(counts == 0):
            raise InvalidArgument(f"class {int(np.argmin(counts))} has no training samples")
        std = standardize(ds)
        if config.augment_to:
            std = augment_minority(std, config.augment_to, config.augment_noise, config.seed)
    Y, labels = std.Y, std.labels
    d, N = Y.shape
    with stage("dimension"):
        eps, p = resolve_dimension(N, config)
    with stage("projection"):
        H = one_hot_labels(labels, ds.n_classes)
        if p <= d:
            proj = fit_mspca(Y, H, p, epsilon=eps)
        else:
            if p > N:
                raise InvalidArgument(f"p={p} exceeds the {N} training samples")
            bw = config.kernel_bandwidth or median_bandwidth(Y, seed=config.seed)
            proj = fit_mkspca(Y, H, p, bandwidth=bw, epsilon=eps)
        Z = transform(proj, Y)
        feature_scale = 1.0
        if proj.mode == "kernel":
            ms = float(np.mean(Z * Z))
            if ms > 0:
                feature_scale = 1.0 / np.sqrt(ms)
            Z = feature_scale * Z
    log.info("projection: mode=%s p=%d eps=%s", proj.mode, p, eps)

    with stage("dictionary"):
        D, X, report = train(Z, labels, config.train_config(), n_classes=ds.n_classes)
    with stage("medoids"):
        medoids = compute_medoids(X, labels, n_classes=ds.n_classes)
    model = ClassifierModel(proj, D, medoids, tau=config.tau, coder=config.coder(),
                            mean=std.mean, scale=std.std, feature_scale=feature_scale,
                            class_names=list(ds.label_names) if ds.label_names else None)
    return FitResult(model, report, X, labels, eps, p, time.perf_counter() - t0)


@dataclass
class FoldResult:
    fold: int
    metrics: Metrics
    train_seconds: float
    p: int


def cross_validate(ds: LabeledDataset, config: PipelineConfig = PipelineConfig(),
                   jobs: int = 1) -> list[FoldResult]:
    splits = stratified_kfold(ds, config.folds, config.seed)
    tasks = [(i, ds.subset(tr), ds.subset(te), config) for i, (tr, te) in enumerate(splits)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    return sorted(results, key=lambda r: r.fold)


def _run_fold(task) -> FoldResult:
    i, train_ds, test_ds, config = task
    res = fit(train_ds, config)
    metrics = evaluate(res.model, test_ds.Y, test_ds.labels)
    return FoldResult(i, metrics, res.seconds, res.p)
