"""Geometry, half-normal hazard detection model and the paired-data likelihood."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

NEG_INF = float("-inf")

# Below this hazard, log(expm1(h)) is evaluated through log(h) to avoid underflow.
_SMALL_HAZARD = 1e-8


@dataclass(frozen=True)
class TrapArray:
    coords: np.ndarray  # (J, 2)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] < 1:
            raise ValueError("trap coordinates must be a non-empty (J, 2) array")
        if not np.all(np.isfinite(coords)):
            raise ValueError("trap coordinates must be finite")
        if len(np.unique(coords, axis=0)) < len(coords):
            warnings.warn("duplicate trap coordinates", stacklevel=3)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def J(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class StateSpace:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError("state space needs xmin < xmax and ymin < ymax")

    @classmethod
    def around(cls, traps: TrapArray, buffer: float) -> "StateSpace":
        """Bounding box of the traps expanded by ``buffer`` on every side."""
        if buffer <= 0:
            raise ValueError("buffer must be positive")
        lo = traps.coords.min(axis=0) - buffer
        hi = traps.coords.max(axis=0) + buffer
        return cls(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.xmax - self.xmin, self.ymax - self.ymin)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return (
            (pts[..., 0] >= self.xmin)
            & (pts[..., 0] <= self.xmax)
            & (pts[..., 1] >= self.ymin)
            & (pts[..., 1] <= self.ymax)
        )

    def strictly_contains(self, traps: TrapArray) -> bool:
        c = traps.coords
        return bool(
            np.all((c[:, 0] > self.xmin) & (c[:, 0] < self.xmax) & (c[:, 1] > self.ymin) & (c[:, 1] < self.ymax))
        )

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random((n, 2))
        lo = np.array([self.xmin, self.ymin])
        return lo + u * np.array([self.xmax - self.xmin, self.ymax - self.ymin])

    def density(self, N: float) -> float:
        return N / self.area


@dataclass(frozen=True)
class DetectionParams:
    lambda0: float
    sigma: float

    def __post_init__(self):
        if not (self.lambda0 > 0 and self.sigma > 0):
            raise ValueError(f"need lambda0 > 0 and sigma > 0, got {self.lambda0}, {self.sigma}")


@dataclass(frozen=True)
class EncounterMatrix:
    counts: np.ndarray  # (M, J) integer capture frequencies
    K: int

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError("encounter counts must be a 2-d array")
        if counts.size and not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.round(counts)):
                raise ValueError("encounter counts must be integers")
        counts = counts.astype(np.int64)
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if counts.size and (counts.min() < 0 or counts.max() > self.K):
            raise ValueError(f"encounter counts must lie in [0, K={self.K}]")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def captured(self) -> np.ndarray:
        return self.counts.sum(axis=1) > 0

    def padded(self, M: int) -> "EncounterMatrix":
        rows, J = self.counts.shape
        if M < rows:
            raise ValueError(f"cannot pad {rows} rows down to M={M}")
        out = np.zeros((M, J), dtype=np.int64)
        out[:rows] = self.counts
        return EncounterMatrix(out, self.K)


@dataclass(frozen=True)
class AugmentedDataset:
    """Left/right encounter matrices augmented to ``M`` rows.

    Rows ``0..n_known-1`` of both sides are the same individuals in the same
    order. Rows past ``n_left`` (left) and ``n_right`` (right) are all-zero.
    """

    left: EncounterMatrix
    right: EncounterMatrix
    n_left: int
    n_right: int
    n_known: int = 0

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ValueError("left and right must share M and J")
        if self.left.K != self.right.K:
            raise ValueError("left and right must share K")
        if self.n_left < self.n_right:
            raise ValueError("left must be the larger data set")
        if not 0 <= self.n_known <= self.n_right:
            raise ValueError("need 0 <= n_known <= n_right")
        if self.n_left > self.M:
            raise ValueError("n_left exceeds M")
        if self.left.counts[self.n_left :].any() or self.right.counts[self.n_right :].any():
            raise ValueError("rows past the observed block must be all-zero")
        unk_l = self.left.captured[self.n_known : self.n_left]
        unk_r = self.right.captured[self.n_known : self.n_right]
        if not (unk_l.all() and unk_r.all()):
            raise ValueError("observed unknown-identity rows must contain a capture")

    @property
    def M(self) -> int:
        return self.left.shape[0]

    @property
    def J(self) -> int:
        return self.left.shape[1]

    @property
    def K(self) -> int:
        return self.left.K


def squared_distances(s: np.ndarray, traps: TrapArray) -> np.ndarray:
    """(n, J) squared distances between activity centres and traps."""
    s = np.asarray(s, dtype=float).reshape(-1, 2)
    diff = s[:, None, :] - traps.coords[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def hazard(s, x, params: DetectionParams):
    d2 = np.sum((np.asarray(s, dtype=float) - np.asarray(x, dtype=float)) ** 2, axis=-1)
    return params.lambda0 * np.exp(-d2 / (2.0 * params.sigma**2))


def detection_prob(s, x, params: DetectionParams):
    return -np.expm1(-hazard(s, x, params))


def log_hazard_from_d2(d2: np.ndarray, params: DetectionParams) -> np.ndarray:
    return math.log(params.lambda0) - d2 / (2.0 * params.sigma**2)


def log_odds_from_log_hazard(logh: np.ndarray) -> np.ndarray:
    """log(p / (1 - p)) = log(expm1(h)), stable for tiny and huge h."""
    logh = np.asarray(logh, dtype=float)
    h = np.exp(logh)
    small = h < _SMALL_HAZARD
    with np.errstate(divide="ignore"):
        big = np.log(np.expm1(np.where(small, 1.0, h)))
    return np.where(small, logh + 0.5 * h, big)


def log_detection_from_log_hazard(logh: np.ndarray) -> np.ndarray:
    """log p = log(1 - exp(-h)) without forming p when h is tiny."""
    logh = np.asarray(logh, dtype=float)
    h = np.exp(logh)
    small = h < _SMALL_HAZARD
    with np.errstate(divide="ignore"):
        big = np.log(-np.expm1(-np.where(small, 1.0, h)))
    return np.where(small, logh - 0.5 * h, big)


@njit(cache=True)
def hazard_kernel(d2, log_lambda0, inv_two_sigma2, K):
    """Fused (log_odds, K * sum_j h) from squared distances; matches the numpy path."""
    n, J = d2.shape
    log_odds = np.empty((n, J))
    hsum = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(J):
            logh = log_lambda0 - d2[i, j] * inv_two_sigma2
            h = np.exp(logh)
            acc += h
            if h < _SMALL_HAZARD:
                log_odds[i, j] = logh + 0.5 * h
            else:
                log_odds[i, j] = np.log(np.expm1(h))
        hsum[i] = K * acc
    return log_odds, hsum


@njit(cache=True)
def squared_distances_fast(s, coords):
    n = s.shape[0]
    J = coords.shape[0]
    out = np.empty((n, J))
    for i in range(n):
        for j in range(J):
            dx = s[i, 0] - coords[j, 0]
            dy = s[i, 1] - coords[j, 1]
            out[i, j] = dx * dx + dy * dy
    return out


@lru_cache(maxsize=None)
def _log_binom_table(K: int) -> np.ndarray:
    y = np.arange(K + 1)
    table = np.array([math.lgamma(K + 1) - math.lgamma(k + 1) - math.lgamma(K - k + 1) for k in y])
    table.setflags(write=False)
    return table


def log_binom_coef(K: int, y) -> np.ndarray:
    if K <= 64:
        return _log_binom_table(K)[np.asarray(y)]
    y = np.asarray(y, dtype=float)
    from scipy.special import gammaln

    return gammaln(K + 1) - gammaln(y + 1) - gammaln(K - y + 1)


def row_constants(counts: np.ndarray, K: int) -> np.ndarray:
    """Per-row sum of log binomial coefficients."""
    counts = np.asarray(counts)
    if counts.size == 0:
        return np.zeros(counts.shape[0])
    return log_binom_coef(K, counts).sum(axis=-1)


def _check_row(row, J: int, K: int) -> np.ndarray:
    row = np.asarray(row)
    if row.shape != (J,):
        raise ValueError(f"row has length {row.shape}, expected {J}")
    if row.min(initial=0) < 0 or row.max(initial=0) > K:
        raise ValueError(f"row entries must lie in [0, {K}]")
    return row


def row_loglik(y_left, y_right_star, z: int, s, traps: TrapArray, params: DetectionParams, K: int) -> float:
    """Log-likelihood of one individual's paired history.

    With ``z = 0`` the only possible history is all-zero on both sides.
    """
    y_left = _check_row(y_left, traps.J, K)
    y_right_star = _check_row(y_right_star, traps.J, K)
    if not z:
        return 0.0 if not (y_left.any() or y_right_star.any()) else NEG_INF
    logh = log_hazard_from_d2(squared_distances(s, traps)[0], params)
    logp = log_detection_from_log_hazard(logh)
    log1mp = -np.exp(logh)
    total = 0.0
    for y in (y_left, y_right_star):
        total += float(np.sum(log_binom_coef(K, y) + y * logp + (K - y) * log1mp))
    return total


def row_terms(
    y: np.ndarray,
    const: np.ndarray,
    captured: np.ndarray,
    z: np.ndarray,
    log_odds: np.ndarray,
    hsum: np.ndarray,
    sides: int,
) -> np.ndarray:
    """Vectorised per-row log-likelihood.

    ``y`` holds the summed counts of ``sides`` binomial rows sharing one
    activity centre, ``hsum`` is K * sum_j h_ij.
    """
    on = const + np.einsum("ij,ij->i", y, log_odds) - sides * hsum
    return np.where(z, on, np.where(captured, NEG_INF, 0.0))


def total_loglik(
    data: AugmentedDataset,
    right_star: EncounterMatrix | np.ndarray,
    z,
    s,
    traps: TrapArray,
    params: DetectionParams,
) -> float:
    rs = right_star.counts if isinstance(right_star, EncounterMatrix) else np.asarray(right_star)
    z = np.asarray(z).astype(bool)
    s = np.asarray(s, dtype=float)
    M, J = data.M, data.J
    if rs.shape != (M, J) or z.shape != (M,) or s.shape != (M, 2) or traps.J != J:
        raise ValueError("dimension mismatch in total_loglik")
    K = data.K
    y = data.left.counts + rs
    const = row_constants(data.left.counts, K) + row_constants(rs, K)
    logh = log_hazard_from_d2(squared_distances(s, traps), params)
    terms = row_terms(
        y.astype(float), const, y.sum(axis=1) > 0, z, log_odds_from_log_hazard(logh), K * np.exp(logh).sum(axis=1), 2
    )
    return float(terms.sum())
