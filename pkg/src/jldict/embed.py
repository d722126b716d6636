"""Label-aware orthonormal projections.

The linear projection keeps the top eigenvectors of S = Y L Y^T with
L = H^T H the label kernel, i.e. it maximizes tr(U^T S U) over
semi-orthogonal U. Since L = H^T H, S = (Y H^T)(Y H^T)^T and only the d x C
class-sum matrix is ever formed.

The kernel variant expresses U = Phi(Y) V and solves

    (K L K) v = lam (K + ridge I) v,   V^T K V = I

with K the Gaussian Gram matrix of the training columns.

S has rank at most C, so any request for more than C directions leaves the
trailing ones undetermined by the labels. Those are filled with the leading
principal directions of the data after deflating the label directions (in
feature space for the kernel variant).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidArgument, NumericalFailure

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class LabelKernelFactors:
    H: np.ndarray
    class_counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.H.shape[0]

    @property
    def n_samples(self) -> int:
        return self.H.shape[1]

    def label_kernel(self) -> np.ndarray:
        """Dense N x N matrix L = H^T H. Only for small problems and tests."""
        return self.H.T @ self.H


@dataclass(frozen=True)
class ProjectionModel:
    mode: str
    p: int
    epsilon: float = float("nan")
    U: np.ndarray | None = None
    V: np.ndarray | None = None
    bandwidth: float | None = None
    train_features: np.ndarray | None = None
    scale_jl: bool = False
    eigenvalues: np.ndarray = field(default=None, repr=False)
    kernel: str = "gaussian"

    @property
    def input_dim(self) -> int:
        if self.mode == "linear":
            return self.U.shape[0]
        return self.train_features.shape[0]

    def with_scale(self, scale_jl: bool) -> "ProjectionModel":
        return ProjectionModel(self.mode, self.p, self.epsilon, self.U, self.V,
                               self.bandwidth, self.train_features, scale_jl,
                               self.eigenvalues, self.kernel)


def one_hot_labels(labels, n_classes: int) -> LabelKernelFactors:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise InvalidArgument("labels must be one-dimensional")
    if n_classes < 1:
        raise InvalidArgument(f"n_classes must be >= 1, got {n_classes}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise InvalidArgument(f"label {bad} outside [0, {n_classes})")
    labels = labels.astype(np.intp)
    H = np.zeros((n_classes, labels.size))
    H[labels, np.arange(labels.size)] = 1.0
    return LabelKernelFactors(H, np.bincount(labels, minlength=n_classes))


def _as_matrix(Y, name="Y"):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise InvalidArgument(f"{name} must be a 2-D matrix, got shape {Y.shape}")
    return Y


def scatter_matrix(Y, H: LabelKernelFactors) -> np.ndarray:
    Y = _as_matrix(Y)
    if Y.shape[1] != H.n_samples:
        raise InvalidArgument(
            f"Y has {Y.shape[1]} columns but labels cover {H.n_samples} samples")
    F = Y @ H.H.T
    S = F @ F.T
    return 0.5 * (S + S.T)


def normalize_signs(M: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive.

    ``argmax`` returns the first maximum, which gives the lowest-index tie rule.
    """
    if M.size == 0:
        return M
    idx = np.argmax(np.abs(M), axis=0)
    signs = np.sign(M[idx, np.arange(M.shape[1])])
    signs[signs == 0] = 1.0
    return M * signs


def _eigh_desc(A):
    try:
        w, Q = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver failed: {exc}") from exc
    return w[::-1], Q[:, ::-1]


def fit_mspca(Y, H: LabelKernelFactors, p: int, epsilon: float = float("nan")
              ) -> ProjectionModel:
    """Linear projection onto the top-p eigenvectors of the label scatter."""
    Y = _as_matrix(Y)
    d = Y.shape[0]
    if not 1 <= p <= d:
        raise InvalidArgument(f"linear projection needs 1 <= p <= d={d}, got p={p}")
    S = scatter_matrix(Y, H)
    w, Q = _eigh_desc(S)
    tol = RANK_RTOL * max(np.trace(S), 0.0)
    r = min(int(np.sum(w > tol)), p)
    U = Q[:, :r]
    if r < p:
        # deflate the label directions, then take leading data-scatter directions
        Yr = Y - U @ (U.T @ Y)
        _, Qf = _eigh_desc(Yr @ Yr.T)
        fill = Qf[:, : p - r]
        fill = fill - U @ (U.T @ fill)
        fill, _ = np.linalg.qr(fill)
        U = np.hstack([U, fill])
    U = normalize_signs(U)
    eig = np.concatenate([w[:r], np.einsum("ij,ij->j", U[:, r:], S @ U[:, r:])])
    return ProjectionModel("linear", p, float(epsilon), U=U, scale_jl=False,
                           eigenvalues=eig)


def gaussian_kernel(A, B, bandwidth: float) -> np.ndarray:
    """k(a, b) = exp(-|a - b|^2 / (2 bandwidth^2)) for all column pairs."""
    if not bandwidth > 0:
        raise InvalidArgument(f"bandwidth must be positive, got {bandwidth!r}")
    sq = (np.sum(A * A, axis=0)[:, None] + np.sum(B * B, axis=0)[None, :]
          - 2.0 * (A.T @ B))
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * bandwidth * bandwidth))


def linear_kernel(A, B, bandwidth=None) -> np.ndarray:
    return A.T @ B


def median_bandwidth(Y, max_samples: int = 2000, seed: int = 0) -> float:
    """Median pairwise distance heuristic for the Gaussian bandwidth."""
    Y = _as_matrix(Y)
    n = Y.shape[1]
    if n > max_samples:
        idx = np.sort(np.random.default_rng(seed).choice(n, max_samples, replace=False))
        Y = Y[:, idx]
        n = max_samples
    sq = np.sum(Y * Y, axis=0)
    dist2 = sq[:, None] + sq[None, :] - 2.0 * (Y.T @ Y)
    iu = np.triu_indices(n, k=1)
    vals = np.sqrt(np.maximum(dist2[iu], 0.0))
    med = float(np.median(vals)) if vals.size else 0.0
    return med if med > 0 else 1.0


_KERNELS = {"gaussian": gaussian_kernel, "linear": linear_kernel}


def default_ridge(K1) -> float:
    return 1e-8 * float(np.trace(K1)) / K1.shape[0]


def fit_mkspca(Y, H: LabelKernelFactors, p: int, bandwidth: float = 1.0,
               ridge: float | None = None, epsilon: float = float("nan"),
               kernel: str = "gaussian") -> ProjectionModel:
    """Kernel projection; the returned model keeps Y for out-of-sample use.

    ``kernel="linear"`` exists to check the dual formulation against
    :func:`fit_mspca`.
    """
    Y = _as_matrix(Y)
    N = Y.shape[1]
    if H.n_samples != N:
        raise InvalidArgument(f"Y has {N} columns but labels cover {H.n_samples} samples")
    if not 1 <= p <= N:
        raise InvalidArgument(f"kernel projection needs 1 <= p <= N={N}, got p={p}")
    if kernel not in _KERNELS:
        raise InvalidArgument(f"unknown kernel {kernel!r}")
    K1 = _KERNELS[kernel](Y, Y, bandwidth)
    K1 = 0.5 * (K1 + K1.T)
    if ridge is None:
        ridge = default_ridge(K1)
    if ridge < 0:
        raise InvalidArgument(f"ridge must be non-negative, got {ridge!r}")

    F = K1 @ H.H.T
    A = F @ F.T
    A = 0.5 * (A + A.T)
    B = K1 + ridge * np.eye(N)
    try:
        w, W = scipy.linalg.eigh(A, B)
    except np.linalg.LinAlgError as exc:
        hint = " (use ridge > 0)" if ridge == 0 else ""
        raise NumericalFailure(f"generalized eigenproblem failed: {exc}{hint}") from exc
    w, W = w[::-1], W[:, ::-1]

    # eigh returns B-normalized vectors, so w^T K1 w = 1 - ridge |w|^2: close to
    # 1 for genuine directions and close to 0 for null-space vectors of K1, whose
    # eigenvalues are rounding noise amplified by the small ridge
    energy = np.einsum("ij,ij->j", W, K1 @ W)
    tol = RANK_RTOL * max(float(w[0]), 0.0)
    label_dirs = np.flatnonzero((w > tol) & (energy > 0.5))[:min(p, H.n_classes)]
    r = label_dirs.size
    V = _k_orthonormalize(W[:, label_dirs], K1, A) if r else np.zeros((N, 0))
    if r < p:
        V = np.hstack([V, _kernel_fill(K1, V, p - r)])
    V = normalize_signs(V)
    eig = np.einsum("ij,ij->j", V, A @ V)
    return ProjectionModel("kernel", p, float(epsilon), V=V, bandwidth=float(bandwidth),
                           train_features=Y.copy(), scale_jl=False, eigenvalues=eig,
                           kernel=kernel)


def _k_orthonormalize(W, K1, A):
    """Rayleigh-Ritz within span(W) so that V^T K1 V = I exactly."""
    G = W.T @ K1 @ W
    T = W.T @ A @ W
    try:
        w, Q = scipy.linalg.eigh(0.5 * (T + T.T), 0.5 * (G + G.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"kernel re-orthonormalization failed: {exc}") from exc
    return W @ Q[:, ::-1]


def _kernel_fill(K1, V, count):
    """Leading kernel principal directions orthogonal (in feature space) to V."""
    N = K1.shape[0]
    P = np.eye(N) - V @ (V.T @ K1)
    G = P.T @ K1 @ P
    w, Q = _eigh_desc(0.5 * (G + G.T))
    keep = w > RANK_RTOL * max(float(np.trace(K1)), 1e-300)
    if int(np.sum(keep)) < count:
        raise NumericalFailure(
            f"kernel Gram matrix supports only {V.shape[1] + int(np.sum(keep))} "
            f"directions, {V.shape[1] + count} requested")
    Vf = P @ Q[:, :count] / np.sqrt(w[:count])
    Vf = _gram_schmidt_k(Vf, V, K1)
    return Vf


def _gram_schmidt_k(Vf, V, K1):
    # one pass of K1-orthogonalization against V and within Vf to clean rounding
    if V.shape[1]:
        Vf = Vf - V @ (V.T @ K1 @ Vf)
    G = Vf.T @ K1 @ Vf
    L = np.linalg.cholesky(0.5 * (G + G.T))
    return scipy.linalg.solve_triangular(L, Vf.T, lower=True).T


def transform(model: ProjectionModel, Yq) -> np.ndarray:
    Yq = np.asarray(Yq, dtype=np.float64)
    vector = Yq.ndim == 1
    if vector:
        Yq = Yq[:, None]
    if Yq.ndim != 2 or Yq.shape[0] != model.input_dim:
        raise InvalidArgument(
            f"expected {model.input_dim} features, got shape {Yq.shape}")
    if model.mode == "linear":
        Z = model.U.T @ Yq
    else:
        kern = _KERNELS[model.kernel]
        Z = model.V.T @ kern(model.train_features, Yq, model.bandwidth)
    if model.scale_jl:
        Z = Z / np.sqrt(model.p)
    return Z[:, 0] if vector else Z


def sample_pairs(n: int, n_pairs: int, seed: int) -> np.ndarray:
    """Distinct unordered index pairs (i < j), at most n(n-1)/2 of them."""
    total = n * (n - 1) // 2
    k = min(int(n_pairs), total)
    flat = np.sort(np.random.default_rng(seed).choice(total, size=k, replace=False))
    # row i owns flat indices [i*n - i(i+1)/2, (i+1)*n - (i+1)(i+2)/2)
    starts = np.arange(n) * n - np.arange(n) * (np.arange(n) + 1) // 2
    i = np.searchsorted(starts, flat, side="right") - 1
    j = flat - starts[i] + i + 1
    return np.stack([i, j], axis=1)


@dataclass(frozen=True)
class DistortionReport:
    epsilon: float
    n_pairs: int
    ratio_min: float
    ratio_max: float
    ratio_mean: float
    fraction_outside: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    ratios: np.ndarray = field(repr=False)


def distortion_ratios(f, Y, pairs):
    Y = _as_matrix(Y)
    diff = Y[:, pairs[:, 0]] - Y[:, pairs[:, 1]]
    den = np.sum(diff * diff, axis=0)
    ok = den > 0
    if not np.any(ok):
        raise InvalidArgument("all sampled pairs coincide; distortion is undefined")
    num = np.sum(f(diff[:, ok]) ** 2, axis=0)
    return num / den[ok]


DISTORTION_SCALES = ("orthonormal", "jl", "none")


def distortion_report(model: ProjectionModel, Y, n_pairs: int = 1000, seed: int = 0,
                      epsilon: float | None = None, scale: str = "orthonormal",
                      bins: int = 20) -> DistortionReport:
    """Empirical squared-distance ratios |f(x_i) - f(x_j)|^2 / |x_i - x_j|^2.

    ``scale`` picks f for the linear model:

    * ``"orthonormal"``: sqrt(d/p) U^T, which preserves squared norms in
      expectation for an orthonormal U (and is U^T itself when p = d);
    * ``"jl"``: U^T / sqrt(p), the scaling used by ``scale_jl``;
    * ``"none"``: U^T.
    """
    if model.mode != "linear":
        raise InvalidArgument("distortion is defined for linear projections only")
    if scale not in DISTORTION_SCALES:
        raise InvalidArgument(f"scale must be one of {DISTORTION_SCALES}, got {scale!r}")
    Y = _as_matrix(Y)
    if Y.shape[1] < 2:
        raise InvalidArgument("need at least two samples")
    eps = model.epsilon if epsilon is None else epsilon
    base = model.with_scale(scale == "jl")
    factor = np.sqrt(model.U.shape[0] / model.p) if scale == "orthonormal" else 1.0
    pairs = sample_pairs(Y.shape[1], n_pairs, seed)
    r = distortion_ratios(lambda Dm: factor * transform(base, Dm), Y, pairs)
    lo, hi = float(r.min()), float(r.max())
    if not hi - lo > 1e-9 * max(1.0, abs(hi)):
        # (near) constant ratios, e.g. a square orthogonal map: centre the bins on them
        lo, hi = lo - 0.05, hi + 0.05
    counts, edges = np.histogram(r, bins=bins, range=(lo, hi))
    if np.isfinite(eps):
        outside = float(np.mean((r <= 1 - eps) | (r >= 1 + eps)))
    else:
        outside = float("nan")
    return DistortionReport(float(eps), int(r.size), float(r.min()), float(r.max()),
                            float(r.mean()), outside, counts, edges, r)


def cosine_gap(Z, X, n_pairs: int = 1000, seed: int = 0) -> np.ndarray:
    """Differences between pairwise cosine similarities of projected data and
    of their sparse codes. Diagnostic only; pairs with a zero vector are skipped.
    """
    Z = _as_matrix(Z, "Z")
    X = _as_matrix(X, "X")
    if Z.shape[1] != X.shape[1]:
        raise InvalidArgument("Z and X must have the same number of columns")
    pairs = sample_pairs(Z.shape[1], n_pairs, seed)

    def cos(M):
        a, b = M[:, pairs[:, 0]], M[:, pairs[:, 1]]
        na, nb = np.linalg.norm(a, axis=0), np.linalg.norm(b, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sum(a * b, axis=0) / (na * nb)

    gap = cos(Z) - cos(X)
    return gap[np.isfinite(gap)]
