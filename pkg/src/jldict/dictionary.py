"""Shared dictionary learning in the projected space.

Alternates jointly sparse coding of each class block (M-SBL) with a K-SVD
sweep over the atoms, minimizing |Z - D X|_F^2 under unit-norm atoms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .embed import normalize_signs
from .errors import InvalidArgument, NumericalFailure
from .sparse import SparseCoderConfig, msbl_code, residual_error

log = logging.getLogger(__name__)

REL_IMPROVEMENT_STOP = 1e-4
MONOTONE_SLACK = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    atoms_per_class: int = 10
    tol: float = 1e-8
    max_outer: int = 30
    seed: int = 0
    coder: SparseCoderConfig = field(default_factory=SparseCoderConfig)

    def __post_init__(self):
        if self.max_outer < 1:
            raise InvalidArgument(f"max_outer must be >= 1, got {self.max_outer}")
        if self.atoms_per_class < 1:
            raise InvalidArgument(f"atoms_per_class must be >= 1, got {self.atoms_per_class}")
        if not self.tol > 0:
            raise InvalidArgument(f"tol must be positive, got {self.tol!r}")


@dataclass
class TrainReport:
    loss_trajectory: list
    outer_iterations: int
    converged: bool
    replaced_atoms: int
    rejected_iterations: int = 0


def dictionary_size(samples_per_class: int, n_classes: int) -> int:
    if samples_per_class < 1 or n_classes < 1:
        raise InvalidArgument("samples_per_class and n_classes must both be >= 1")
    return samples_per_class * n_classes


def init_dictionary(p: int, K: int, seed: int, *, require_overcomplete: bool = True
                    ) -> np.ndarray:
    """Gaussian random p x K dictionary with unit-norm columns."""
    if p < 1 or K < 1:
        raise InvalidArgument(f"p and K must be >= 1, got p={p}, K={K}")
    if require_overcomplete and K < p:
        raise InvalidArgument(f"dictionary needs K >= p, got K={K} < p={p}")
    D = np.random.default_rng(seed).standard_normal((p, K))
    return _unit_columns(D)


def _unit_columns(D):
    norms = np.linalg.norm(D, axis=0)
    norms[norms == 0] = 1.0
    return D / norms


def _top_left_singular(E):
    """Leading left singular vector and value of E.

    For wide blocks the p x p Gram matrix is much cheaper than a full SVD;
    the returned vector is refined by one power step for accuracy.
    """
    p, m = E.shape
    if m <= 2 * p:
        u, s, _ = np.linalg.svd(E, full_matrices=False)
        return u[:, 0], float(s[0])
    G = E @ E.T
    w, Q = scipy.linalg.eigh(G, subset_by_index=[p - 1, p - 1])
    u = G @ Q[:, 0]
    norm = np.linalg.norm(u)
    if norm == 0:
        return Q[:, 0], 0.0
    u /= norm
    return u, float(np.linalg.norm(E.T @ u))


def _sweep(D, Z, X, tol=0.0):
    D = np.array(D, dtype=np.float64)
    X = np.array(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if D.shape[0] != Z.shape[0] or X.shape != (D.shape[1], Z.shape[1]):
        raise InvalidArgument(
            f"incompatible shapes D{D.shape}, Z{Z.shape}, X{X.shape}")
    R = Z - D @ X
    replaced = 0
    taken = np.zeros(Z.shape[1], dtype=bool)
    for j in range(D.shape[1]):
        omega = np.flatnonzero(np.abs(X[j]) > tol)
        if omega.size == 0:
            norms = np.einsum("ij,ij->j", R, R)
            norms[taken] = -1.0
            w = int(np.argmax(norms))
            znorm = np.linalg.norm(Z[:, w])
            if norms[w] <= 0 or znorm == 0:
                continue
            taken[w] = True
            atom = normalize_signs((Z[:, w] / znorm)[:, None])[:, 0]
            coef = float(atom @ R[:, w])
            D[:, j] = atom
            X[j, w] = coef
            R[:, w] -= coef * atom
            replaced += 1
            continue
        E = R[:, omega] + np.outer(D[:, j], X[j, omega])
        try:
            u1, sv = _top_left_singular(E)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"SVD failed while updating atom {j}: {exc}") from exc
        if sv == 0:
            continue
        sign = np.sign(u1[np.argmax(np.abs(u1))]) or 1.0
        u1 = sign * u1
        D[:, j] = u1
        X[j, omega] = u1 @ E
        R[:, omega] = E - np.outer(u1, X[j, omega])
    return D, X, replaced


def ksvd_sweep(D, Z, X) -> tuple[np.ndarray, np.ndarray]:
    """One K-SVD pass over the atoms in index order.

    Each used atom and its nonzero coefficients become the best rank-1 fit of
    the residual restricted to the samples that use it. An unused atom is
    replaced by the normalized training column with the largest residual,
    with that column's coefficient set to the projection of its residual.
    """
    D, X, _ = _sweep(D, Z, X)
    return D, X


def code_blocks(D, Z, labels, coder: SparseCoderConfig) -> np.ndarray:
    """M-SBL per class: columns of one class share row variances."""
    labels = np.asarray(labels)
    X = np.zeros((D.shape[1], Z.shape[1]))
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        X[:, idx] = msbl_code(D, Z[:, idx], coder).X
    return X


def train(Z, labels, config: TrainConfig = TrainConfig(), n_classes: int | None = None):
    """Learn a shared dictionary for projected data Z (p x N).

    Returns ``(D, X, report)``. ``X`` holds the per-class M-SBL codes of the
    training columns under the final dictionary, i.e. codes produced the same
    way as for queries, which is what the class medoids are built from.

    An outer iteration whose loss exceeds the previous one is rolled back and
    ends training, so the recorded trajectory is non-increasing.
    """
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    if Z.ndim != 2:
        raise InvalidArgument("Z must be a 2-D matrix")
    if labels.shape != (Z.shape[1],):
        raise InvalidArgument(f"need {Z.shape[1]} labels, got {labels.shape}")
    p, N = Z.shape
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    K = dictionary_size(config.atoms_per_class, n_classes)
    if N < K:
        log.warning("fewer training samples (%d) than atoms (%d)", N, K)
    if K < p:
        log.warning("dictionary is undercomplete: K=%d < p=%d", K, p)
    D = init_dictionary(p, K, config.seed, require_overcomplete=False)

    losses = []
    replaced = 0
    rejected = 0
    converged = False
    for outer in range(config.max_outer):
        X = code_blocks(D, Z, labels, config.coder)
        D_new, X_new, n_rep = _sweep(D, Z, X)
        loss = residual_error(Z, D_new, X_new)
        if not np.isfinite(loss):
            raise NumericalFailure(f"non-finite loss at outer iteration {outer + 1}")
        if losses and loss > losses[-1] * (1 + MONOTONE_SLACK):
            log.info("outer iteration %d raised loss %.6g -> %.6g; rolled back",
                     outer + 1, losses[-1], loss)
            rejected += 1
            converged = True
            break
        D = D_new
        replaced += n_rep
        losses.append(loss)
        log.debug("outer %d loss %.6g", outer + 1, loss)
        if loss <= config.tol:
            converged = True
            break
        if len(losses) > 1 and losses[-2] > 0:
            if (losses[-2] - loss) / losses[-2] < REL_IMPROVEMENT_STOP:
                converged = True
                break

    X = code_blocks(D, Z, labels, config.coder)
    report = TrainReport(losses, len(losses), converged, replaced, rejected)
    return D, X, report
