"""Per-class Gaussian profiles and divergence-ranked pair selection.

Each class is profiled by a Gaussian fitted to its pooled training
features (maximum-likelihood: population covariance, divide by N). The
confusion score between two classes is the Jensen-Shannon divergence,
computed by moment-matching the two-component mixture with a single
Gaussian and applying the closed-form Gaussian KL divergence

    KL(Nj || Nk) = 1/2 ( tr(Sk^-1 Sj - I) + log(|Sk| / |Sj|)
                         + (mj - mk)^T Sk^-1 (mj - mk) )

All math runs in float64 regardless of the storage dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimMismatch, NoPairsAvailable, NumericalFailure, TooFewSamples

DIAGONAL = "diagonal"
FULL = "full"


def pool_features(amap: np.ndarray) -> np.ndarray:
    """Global average pooling: mean over the H*W cells of each channel."""
    if amap.ndim != 3:
        raise DimMismatch(f"expected an (H, W, d) activation map, got shape {amap.shape}")
    return np.asarray(amap, dtype=np.float64).mean(axis=(0, 1))


@dataclass(frozen=True)
class ClassProfile:
    """Fitted Gaussian of one class's pooled features.

    ``covariance`` is a (d,) vector of variances in diagonal mode or a
    (d, d) symmetric matrix in full mode; ``epsilon`` is the
    regularization floor applied before any use of the covariance.
    """

    class_id: int
    mean: np.ndarray
    covariance: np.ndarray
    epsilon: float

    @property
    def mode(self) -> str:
        return DIAGONAL if self.covariance.ndim == 1 else FULL

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_profile(features, class_id: int, mode: str = DIAGONAL,
                epsilon: float = 1e-6) -> ClassProfile:
    """Maximum-likelihood Gaussian fit of >= 2 pooled feature vectors."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatch(f"expected a (N, d) feature array, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise TooFewSamples(f"class {class_id}: need >= 2 samples to fit, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    if mode == DIAGONAL:
        cov = np.maximum((centered ** 2).mean(axis=0), epsilon)
    elif mode == FULL:
        cov = centered.T @ centered / n
        cov = 0.5 * (cov + cov.T)
    else:
        raise ValueError(f"unknown covariance mode '{mode}'")
    return ClassProfile(class_id, mean, cov, epsilon)


def _check_compatible(p: ClassProfile, q: ClassProfile):
    if p.dim != q.dim:
        raise DimMismatch(f"profile dims differ: {p.dim} vs {q.dim}")
    if p.mode != q.mode:
        raise DimMismatch(f"profile covariance modes differ: {p.mode} vs {q.mode}")


def kl_divergence(p: ClassProfile, q: ClassProfile) -> float:
    """Closed-form KL(p || q) between two Gaussian profiles."""
    _check_compatible(p, q)
    delta = p.mean - q.mean
    d = p.dim
    if p.mode == DIAGONAL:
        # use-time regularization: epsilon added, mirroring the full-mode
        # sigma + eps*I so the two modes agree on diagonal covariances
        vp = p.covariance + p.epsilon
        vq = q.covariance + q.epsilon
        return float(0.5 * (np.sum(vp / vq) - d + np.sum(np.log(vq) - np.log(vp))
                            + np.sum(delta ** 2 / vq)))
    sp = p.covariance + p.epsilon * np.eye(d)
    sq = q.covariance + q.epsilon * np.eye(d)
    try:
        lp = np.linalg.cholesky(sp)
        lq = np.linalg.cholesky(sq)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"covariance not positive definite: {exc}") from exc
    logdet_p = 2.0 * np.sum(np.log(np.diag(lp)))
    logdet_q = 2.0 * np.sum(np.log(np.diag(lq)))
    # tr(Sq^-1 Sp) via triangular solves against the Cholesky factor.
    a = solve_triangular(lq, sp, lower=True)
    b = solve_triangular(lq, a.T, lower=True)
    trace = float(np.trace(b))
    y = solve_triangular(lq, delta, lower=True)
    maha = float(y @ y)
    return float(0.5 * (trace - d + logdet_q - logdet_p + maha))


def moment_match_mixture(p: ClassProfile, q: ClassProfile) -> ClassProfile:
    """Gaussian with the mean and covariance of the mixture (p + q) / 2."""
    _check_compatible(p, q)
    mean = 0.5 * (p.mean + q.mean)
    eps = max(p.epsilon, q.epsilon)
    if p.mode == DIAGONAL:
        second = 0.5 * (p.covariance + p.mean ** 2) + 0.5 * (q.covariance + q.mean ** 2)
        cov = np.maximum(second - mean ** 2, eps)
    else:
        second = (0.5 * (p.covariance + np.outer(p.mean, p.mean))
                  + 0.5 * (q.covariance + np.outer(q.mean, q.mean)))
        cov = second - np.outer(mean, mean)
        cov = 0.5 * (cov + cov.T)
    return ClassProfile(-1, mean, cov, eps)


def jsd(p: ClassProfile, q: ClassProfile) -> float:
    """Jensen-Shannon divergence via the moment-matched mixture Gaussian."""
    m = moment_match_mixture(p, q)
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m)


@dataclass(frozen=True)
class PairDistance:
    pair: tuple[int, int]
    jsd: float


def pairwise_distances(profiles) -> list[PairDistance]:
    """JSD for every unordered class pair, canonically ordered."""
    by_id = sorted(profiles, key=lambda pr: pr.class_id)
    out = []
    for i in range(len(by_id)):
        for j in range(i + 1, len(by_id)):
            p, q = by_id[i], by_id[j]
            out.append(PairDistance((p.class_id, q.class_id), jsd(p, q)))
    return out


def select_pairs(profiles, b: int, excluded=frozenset()) -> list[PairDistance]:
    """The b lowest-JSD class pairs, exclusions removed.

    Ties break lexicographically on the (j, k) pair key, so the result is
    independent of the input profile ordering.
    """
    if len(list(profiles)) < 2:
        raise TooFewSamples("need >= 2 profiles to form pairs")
    if b < 1:
        raise ValueError(f"b must be >= 1, got {b}")
    excluded = {tuple(sorted(pair)) for pair in excluded}
    candidates = [pd for pd in pairwise_distances(profiles) if pd.pair not in excluded]
    if not candidates:
        raise NoPairsAvailable("all class pairs are excluded")
    candidates.sort(key=lambda pd: (pd.jsd, pd.pair))
    return candidates[:b]
