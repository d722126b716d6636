"""Multi-snapshot sparse Bayesian learning (M-SBL) and a greedy reference coder.

Model: Z = D X + noise, noise ~ N(0, sigma2 I), and each row x_i of X is
N(0, gamma_i I) shared across the M columns (snapshots). Maximizing the
marginal likelihood over gamma drives the variances of irrelevant rows to
zero, which is what makes the codes sparse.

Posterior on the active rows, with G = diag(gamma):

    Sigma = (G^-1 + D^T D / sigma2)^-1,   Mu = Sigma D^T Z / sigma2

Sigma is evaluated as G^1/2 (I + G^1/2 D^T D G^1/2 / sigma2)^-1 G^1/2 so
that small gammas never get inverted.

Two hyperparameter updates are available:

``fixed_point`` (default)
    gamma_i <- (|mu_i|^2 / M) / (1 - Sigma_ii / gamma_i)
``em``
    gamma_i <- |mu_i|^2 / M + Sigma_ii

Both decrease the negative log marginal likelihood. EM shrinks irrelevant
variances only like 1/t, so with a finite iteration budget it rarely reaches
the pruning threshold; the fixed-point rule decays them geometrically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .errors import InvalidArgument, NumericalFailure

UPDATE_RULES = ("fixed_point", "em")


@dataclass(frozen=True)
class SparseCoderConfig:
    sigma2: float = 0.03
    max_iters: int = 200
    prune_threshold: float = 1e-6
    tol: float = 1e-4
    update_rule: str = "fixed_point"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise InvalidArgument(f"sigma2 must be positive, got {self.sigma2!r}")
        if not self.prune_threshold > 0:
            raise InvalidArgument(f"prune_threshold must be positive, got {self.prune_threshold!r}")
        if not self.tol > 0:
            raise InvalidArgument(f"tol must be positive, got {self.tol!r}")
        if self.max_iters < 1:
            raise InvalidArgument(f"max_iters must be >= 1, got {self.max_iters!r}")
        if self.update_rule not in UPDATE_RULES:
            raise InvalidArgument(f"update_rule must be one of {UPDATE_RULES}")


@dataclass
class CodingResult:
    X: np.ndarray
    gammas: np.ndarray
    iterations: int
    converged: bool
    objective: list = field(default_factory=list, repr=False)


def _check_dims(D, Z):
    D = np.asarray(D, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if D.ndim != 2 or Z.ndim != 2:
        raise InvalidArgument("D and Z must be 2-D")
    if D.shape[0] != Z.shape[0]:
        raise InvalidArgument(f"D has {D.shape[0]} rows but Z has {Z.shape[0]}")
    return D, Z


def posterior(D, Z, gammas, sigma2, gram=None, cross=None):
    """Posterior covariance and mean for the rows with the given variances.

    ``gram`` = D^T D and ``cross`` = D^T Z may be passed in precomputed.
    """
    sq = np.sqrt(gammas)
    A = D.T @ D if gram is None else gram.copy()
    A *= sq[:, None]
    A *= sq[None, :]
    A /= sigma2
    A[np.diag_indices_from(A)] += 1.0
    chol, info = lapack.dpotrf(A, lower=False)
    if info == 0:
        inv, info = lapack.dpotri(chol, lower=False)
    if info != 0:
        raise NumericalFailure(f"posterior covariance is not positive definite (info={info})")
    Sigma = np.triu(inv)
    Sigma += np.triu(inv, 1).T
    Sigma *= sq[:, None]
    Sigma *= sq[None, :]
    if cross is None:
        cross = D.T @ Z
    Mu = Sigma @ cross / sigma2
    return Sigma, Mu


def neg_log_marginal(D, Z, gammas, sigma2) -> float:
    """log|Sigma_z| + tr(Sigma_z^-1 Z Z^T) / M with Sigma_z = sigma2 I + D G D^T."""
    D, Z = _check_dims(D, Z)
    C = sigma2 * np.eye(D.shape[0]) + (D * gammas) @ D.T
    sign, logdet = np.linalg.slogdet(C)
    if sign <= 0:
        raise NumericalFailure("marginal covariance is not positive definite")
    return float(logdet + np.trace(np.linalg.solve(C, Z @ Z.T)) / Z.shape[1])


def msbl_code(D, Z, config: SparseCoderConfig = SparseCoderConfig(),
              track_objective: bool = False, callback=None) -> CodingResult:
    """Jointly sparse codes for the columns of Z with shared row variances.

    Rows whose variance falls below ``config.prune_threshold`` are removed for
    good and come back as exact zeros in ``X``. ``callback(iteration, active,
    Sigma)`` is invoked with the posterior covariance of every iteration.
    """
    D, Z = _check_dims(D, Z)
    K = D.shape[1]
    M = Z.shape[1]
    if M < 1:
        raise InvalidArgument("Z must have at least one column")
    if not (np.all(np.isfinite(D)) and np.all(np.isfinite(Z))):
        raise NumericalFailure("non-finite input to sparse coder")

    # canonical column order: permuting Z then permutes X and leaves gammas
    # bitwise unchanged, since every product sees the same operand layout
    order = np.lexsort(Z[::-1])
    Z = np.ascontiguousarray(Z[:, order])

    G_full = D.T @ D
    B_full = D.T @ Z
    gammas = np.ones(K)
    active = np.arange(K)
    X = np.zeros((K, M))
    objective = []
    if track_objective:
        objective.append(neg_log_marginal(D, Z, gammas, config.sigma2))

    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        ga = gammas[active]
        Sigma, mu = posterior(None, None, ga, config.sigma2,
                              gram=G_full[np.ix_(active, active)], cross=B_full[active])
        if callback is not None:
            callback(it, active.copy(), Sigma)
        power = np.einsum("ij,ij->i", mu, mu) / M
        diag = np.diag(Sigma)
        if config.update_rule == "em":
            new = power + diag
        else:
            shrink = 1.0 - diag / ga
            new = power / np.maximum(shrink, np.finfo(float).tiny)
        if not np.all(np.isfinite(new)):
            raise NumericalFailure(f"non-finite hyperparameters at iteration {it}")

        change = np.max(np.abs(new - ga) / ga)
        gammas[active] = new
        keep = new >= config.prune_threshold
        if not np.all(keep):
            gammas[active[~keep]] = 0.0
            active = active[keep]
        if track_objective:
            objective.append(neg_log_marginal(D, Z, gammas, config.sigma2))
        if active.size == 0 or change < config.tol:
            converged = True
            break

    if active.size:
        # posterior mean under the final hyperparameters
        _, mu = posterior(None, None, gammas[active], config.sigma2,
                          gram=G_full[np.ix_(active, active)], cross=B_full[active])
        X[active] = mu
    out = np.empty_like(X)
    out[:, order] = X
    return CodingResult(out, gammas, it, converged, objective)


def code_single(D, z, config: SparseCoderConfig = SparseCoderConfig()) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise InvalidArgument("z must be a vector")
    return msbl_code(D, z[:, None], config).X[:, 0]


def greedy_code(D, Z, sparsity: int) -> np.ndarray:
    """Orthogonal matching pursuit, column by column."""
    D, Z = _check_dims(D, Z)
    p, K = D.shape
    if not 1 <= sparsity <= min(p, K):
        raise InvalidArgument(f"sparsity must be in [1, {min(p, K)}], got {sparsity}")
    X = np.zeros((K, Z.shape[1]))
    for col in range(Z.shape[1]):
        z = Z[:, col]
        support = []
        residual = z.copy()
        coef = np.zeros(0)
        for _ in range(sparsity):
            corr = np.abs(D.T @ residual)
            corr[support] = -1.0
            support.append(int(np.argmax(corr)))
            coef, *_ = np.linalg.lstsq(D[:, support], z, rcond=None)
            residual = z - D[:, support] @ coef
        X[support, col] = coef
    return X


def residual_error(Z, D, X) -> float:
    """Squared Frobenius norm of Z - D X."""
    D, Z = _check_dims(D, Z)
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (D.shape[1], Z.shape[1]):
        raise InvalidArgument(
            f"X has shape {X.shape}, expected {(D.shape[1], Z.shape[1])}")
    R = Z - D @ X
    return float(np.einsum("ij,ij->", R, R))


def support_jaccard(X, labels, tol: float = 0.0) -> tuple[float, float]:
    """Mean Jaccard similarity of code supports within and across classes.

    Diagnostic for how consistently same-class samples select the same atoms.
    Returns (within, across); NaN where no pair exists.
    """
    X = np.asarray(X)
    labels = np.asarray(labels)
    S = (np.abs(X) > tol).astype(np.float64)
    inter = S.T @ S
    size = S.sum(axis=0)
    union = size[:, None] + size[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        J = np.where(union > 0, inter / union, 1.0)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    within = J[same & off]
    across = J[~same]
    return (float(within.mean()) if within.size else float("nan"),
            float(across.mean()) if across.size else float("nan"))
