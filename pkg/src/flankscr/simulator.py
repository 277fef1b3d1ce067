"""Simulated populations, paired encounter data and their scrambled observable form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .identity import IdAssignment, canonicalize
from .model import (
    AugmentedDataset,
    DetectionParams,
    EncounterMatrix,
    StateSpace,
    TrapArray,
    squared_distances,
)


@dataclass(frozen=True)
class SimTruth:
    N: int
    s_true: np.ndarray  # (N, 2)
    left_true: np.ndarray  # (N, J), row k is individual k
    right_true: np.ndarray
    params: DetectionParams
    K: int


def square_grid(n: int, spacing: float = 1.0, origin: float = 1.0) -> TrapArray:
    """n x n trap grid numbered row by row, e.g. the 5 x 5 unit grid."""
    g = origin + spacing * np.arange(n)
    return TrapArray(np.array([(x, y) for y in g for x in g]))


def simulate(
    N: int,
    traps: TrapArray,
    space: StateSpace,
    params: DetectionParams,
    K: int,
    rng: np.random.Generator,
) -> SimTruth:
    if N < 0:
        raise ValueError("N must be >= 0")
    if K < 1:
        raise ValueError("K must be >= 1")
    s = space.uniform(rng, N)
    h = params.lambda0 * np.exp(-squared_distances(s, traps) / (2 * params.sigma**2))
    p = -np.expm1(-h)
    left = rng.binomial(K, p).reshape(N, traps.J)
    right = rng.binomial(K, p).reshape(N, traps.J)
    return SimTruth(N, s, left, right, params, K)


def scramble(
    truth: SimTruth, n_known: int, M: int, rng: np.random.Generator
) -> tuple[AugmentedDataset, IdAssignment]:
    """Observable data: unmatched left and right rows plus ``n_known`` matched individuals.

    Known individuals are drawn from the whole population, so some may have an
    all-zero (observed) history. The answer key maps every right row to its
    true left row; right rows whose individual was never seen on the left point
    at distinct all-zero left rows, which are interchangeable.
    """
    N, J = truth.left_true.shape
    if n_known > N:
        raise ValueError("n_known exceeds N")
    known = rng.choice(N, size=n_known, replace=False) if n_known else np.zeros(0, dtype=np.int64)
    is_known = np.zeros(N, dtype=bool)
    is_known[known] = True
    cap_l = truth.left_true.sum(axis=1) > 0
    cap_r = truth.right_true.sum(axis=1) > 0
    left_ind = np.concatenate([known, rng.permutation(np.flatnonzero(cap_l & ~is_known))])
    right_ind = np.concatenate([known, rng.permutation(np.flatnonzero(cap_r & ~is_known))])
    n_obs = max(len(left_ind), len(right_ind))
    if M < n_obs + 1:
        raise ValueError(f"M={M} is smaller than the observed count + 1 ({n_obs + 1})")

    lc = np.zeros((M, J), dtype=np.int64)
    rc = np.zeros((M, J), dtype=np.int64)
    lc[: len(left_ind)] = truth.left_true[left_ind]
    rc[: len(right_ind)] = truth.right_true[right_ind]

    # true left row of each right row
    left_row_of = {int(ind): k for k, ind in enumerate(left_ind)}
    key = np.full(M, -1, dtype=np.int64)
    used = np.zeros(M, dtype=bool)
    for r, ind in enumerate(right_ind):
        if int(ind) in left_row_of:
            key[r] = left_row_of[int(ind)]
            used[key[r]] = True
    spare = iter(np.flatnonzero(~used[len(left_ind) :]) + len(left_ind))
    for r in range(len(right_ind)):
        if key[r] < 0:
            key[r] = next(spare)
            used[key[r]] = True
    rest = iter(np.flatnonzero(~used))
    for r in range(len(right_ind), M):
        key[r] = next(rest)

    K = truth.K
    data, swapped = canonicalize(EncounterMatrix(lc, K), EncounterMatrix(rc, K), n_known, M)
    if swapped:
        inv = np.empty_like(key)
        inv[key] = np.arange(M)
        key = inv
    return data, IdAssignment(key, n_known)


def perfect_dataset(truth: SimTruth, M: int) -> AugmentedDataset:
    """Fully reconciled data: every individual seen on either side, same row on both sides."""
    seen = np.flatnonzero((truth.left_true.sum(axis=1) + truth.right_true.sum(axis=1)) > 0)
    n = len(seen)
    if M < n + 1:
        raise ValueError(f"M={M} is smaller than the observed count + 1 ({n + 1})")
    J = truth.left_true.shape[1]
    lc = np.zeros((M, J), dtype=np.int64)
    rc = np.zeros((M, J), dtype=np.int64)
    lc[:n] = truth.left_true[seen]
    rc[:n] = truth.right_true[seen]
    return AugmentedDataset(EncounterMatrix(lc, truth.K), EncounterMatrix(rc, truth.K), n, n, n)


def _midpoint_grid(space: StateSpace, n: int) -> np.ndarray:
    xs = space.xmin + (np.arange(n) + 0.5) * (space.xmax - space.xmin) / n
    ys = space.ymin + (np.arange(n) + 0.5) * (space.ymax - space.ymin) / n
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def capture_probability(
    traps: TrapArray, space: StateSpace, params: DetectionParams, K: int, n_grid: int = 400, sides: int = 1
) -> float:
    """Probability that an individual with uniform s is captured at least once on ``sides`` sides combined.

    Midpoint-rule integral of 1 - prod_j (1 - p_j)^(K * sides) over the state space.
    """
    pts = _midpoint_grid(space, n_grid)
    total = 0.0
    for chunk in np.array_split(pts, max(1, len(pts) // 20000)):
        h = params.lambda0 * np.exp(-squared_distances(chunk, traps) / (2 * params.sigma**2))
        total += float(-np.expm1(-sides * K * h.sum(axis=1)).sum())
    return total / len(pts)


def expected_captures(
    N: int, traps: TrapArray, space: StateSpace, params: DetectionParams, K: int, n_grid: int = 400
) -> float:
    """Expected capture events on one side."""
    pts = _midpoint_grid(space, n_grid)
    total = 0.0
    for chunk in np.array_split(pts, max(1, len(pts) // 20000)):
        h = params.lambda0 * np.exp(-squared_distances(chunk, traps) / (2 * params.sigma**2))
        total += float((-np.expm1(-h)).sum())
    return N * K * total / len(pts)


def calibrate_occasions(
    target: float,
    N: int,
    traps: TrapArray,
    space: StateSpace,
    params: DetectionParams,
    statistic: str = "caps",
    K_max: int = 64,
) -> int:
    """K whose expected one-side statistic ('caps' or 'n') is closest to ``target``."""
    best, best_err = 1, float("inf")
    for K in range(1, K_max + 1):
        if statistic == "caps":
            val = expected_captures(N, traps, space, params, K, n_grid=200)
        elif statistic == "n":
            val = N * capture_probability(traps, space, params, K, n_grid=200)
        else:
            raise ValueError("statistic must be 'caps' or 'n'")
        err = abs(val - target)
        if err < best_err:
            best, best_err = K, err
    return best
