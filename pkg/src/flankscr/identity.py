"""Latent identity permutation linking right-side rows to left-side rows.

Indices are 0-based in code. ``perm[r]`` is the left row that right row ``r``
belongs to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import AugmentedDataset, EncounterMatrix, TrapArray


@dataclass(frozen=True)
class IdAssignment:
    perm: np.ndarray
    n_known: int = 0

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64).copy()
        M = perm.shape[0]
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(M)):
            raise ValueError("id is not a bijection on 0..M-1")
        if not np.array_equal(perm[: self.n_known], np.arange(self.n_known)):
            raise ValueError("known rows must map to themselves")
        perm.setflags(write=False)
        object.__setattr__(self, "perm", perm)

    @classmethod
    def identity(cls, M: int, n_known: int = 0) -> "IdAssignment":
        return cls(np.arange(M), n_known)

    @property
    def M(self) -> int:
        return self.perm.shape[0]

    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.M)
        return inv

    def swapped(self, i: int, j: int) -> "IdAssignment":
        p = self.perm.copy()
        p[i], p[j] = p[j], p[i]
        return IdAssignment(p, self.n_known)


@dataclass(frozen=True)
class CaptureCentroid:
    location: tuple[float, float] | None
    n_caps: int


def centroid(row, traps: TrapArray) -> CaptureCentroid:
    row = np.asarray(row)
    if row.shape != (traps.J,):
        raise ValueError("row length must equal the number of traps")
    n = int(row.sum())
    if n == 0:
        return CaptureCentroid(None, 0)
    loc = row @ traps.coords / n
    return CaptureCentroid((float(loc[0]), float(loc[1])), n)


def centroids(counts: np.ndarray, traps: TrapArray) -> np.ndarray:
    """(M, 2) capture-weighted centroids; NaN rows where nothing was captured."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = counts @ traps.coords / n[:, None]
    out[n == 0] = np.nan
    return out


def _observed_order(counts: np.ndarray, n_known: int) -> np.ndarray:
    captured = counts.sum(axis=1) > 0
    rest = np.arange(n_known, counts.shape[0])
    # stable: captured rows first, original order otherwise
    rest = np.concatenate([rest[captured[rest]], rest[~captured[rest]]])
    return np.concatenate([np.arange(n_known), rest])


def canonicalize(
    left: EncounterMatrix, right: EncounterMatrix, n_known: int = 0, M: int | None = None
) -> tuple[AugmentedDataset, bool]:
    """Put two scrambled matrices into canonical augmented form.

    Known rows stay first, captured rows precede all-zero rows, both sides are
    padded to a common ``M`` and, if the right side has more observed rows, the
    two sides are exchanged so that left is the larger data set.
    """
    if left.shape[1] != right.shape[1]:
        raise ValueError("left and right have different numbers of traps")
    if left.K != right.K:
        raise ValueError("left and right have different K")
    M = max(left.shape[0], right.shape[0], M or 0)
    lc, rc = left.padded(M).counts, right.padded(M).counts
    if n_known < 0 or n_known > min(left.shape[0], right.shape[0]):
        raise ValueError("n_known exceeds the observed rows")
    lc = lc[_observed_order(lc, n_known)]
    rc = rc[_observed_order(rc, n_known)]
    n_l = n_known + int((lc[n_known:].sum(axis=1) > 0).sum())
    n_r = n_known + int((rc[n_known:].sum(axis=1) > 0).sum())
    swapped = n_r > n_l
    if swapped:
        lc, rc, n_l, n_r = rc, lc, n_r, n_l
    K = left.K
    return AugmentedDataset(EncounterMatrix(lc, K), EncounterMatrix(rc, K), n_l, n_r, n_known), swapped


def reorder_right(right: EncounterMatrix | np.ndarray, id: IdAssignment) -> np.ndarray:
    """Right rows placed in left-row order: ``out[perm[r]] = right[r]``."""
    counts = right.counts if isinstance(right, EncounterMatrix) else np.asarray(right)
    if counts.shape[0] != id.M:
        raise ValueError("id length does not match the number of rows")
    out = np.empty_like(counts)
    out[id.perm] = counts
    return out


def greedy_init(data: AugmentedDataset, traps: TrapArray) -> IdAssignment:
    """Greedy nearest-centroid matching of captured right rows to captured left rows."""
    M, nk = data.M, data.n_known
    perm = np.full(M, -1, dtype=np.int64)
    perm[:nk] = np.arange(nk)
    used = np.zeros(M, dtype=bool)
    used[:nk] = True

    right_rows = np.arange(nk, data.n_right)
    left_rows = np.arange(nk, data.n_left)
    if len(right_rows) and len(left_rows):
        cr = centroids(data.right.counts[right_rows], traps)
        cl = centroids(data.left.counts[left_rows], traps)
        d = np.sqrt(((cr[:, None, :] - cl[None, :, :]) ** 2).sum(axis=-1))
        ri, li = np.meshgrid(np.arange(len(right_rows)), np.arange(len(left_rows)), indexing="ij")
        order = np.lexsort((li.ravel(), ri.ravel(), d.ravel()))
        r_done = np.zeros(len(right_rows), dtype=bool)
        l_done = np.zeros(len(left_rows), dtype=bool)
        remaining = min(len(right_rows), len(left_rows))
        for k in order:
            a, b = divmod(int(k), len(left_rows))
            if r_done[a] or l_done[b]:
                continue
            r_done[a] = l_done[b] = True
            perm[right_rows[a]] = left_rows[b]
            used[left_rows[b]] = True
            remaining -= 1
            if remaining == 0:
                break

    free_left = iter(np.flatnonzero(~used))
    for r in range(nk, M):
        if perm[r] < 0:
            perm[r] = next(free_left)
    return IdAssignment(perm, nk)


def swap_neighborhood(
    i: int, id: IdAssignment, data: AugmentedDataset, traps: TrapArray, radius: float
) -> set[int]:
    """Right rows whose identity may be exchanged with right row ``i``."""
    nk = data.n_known
    if i < nk:
        raise ValueError("known identities are never proposed")
    cand = np.arange(nk, data.M)
    cand = cand[cand != i]
    r_zero = ~data.right.captured
    if r_zero[i]:
        return set(int(c) for c in cand)
    l_zero = ~data.left.captured
    assigned = id.perm[cand]
    free = r_zero[cand] & l_zero[assigned]
    ci = centroids(data.right.counts[i : i + 1], traps)[0]
    cl = centroids(data.left.counts[assigned], traps)
    with np.errstate(invalid="ignore"):
        near = np.sqrt(((cl - ci) ** 2).sum(axis=1)) <= radius
    return set(int(c) for c in cand[free | near])


@njit(cache=True)
def _hastings(r, r2, perm, free, n_free, near, near_count, right_zero, left_zero):
    a = perm[r]
    b = perm[r2]
    r2_captured = not right_zero[r2]
    q_fwd = 1.0 / (near_count[r] - int(near[r, a]) + n_free)
    if r2_captured and near[r2, a]:
        q_fwd += 1.0 / (near_count[r2] - int(near[r2, b]) + n_free)
    free_after = right_zero[r2] and left_zero[a]
    n_free_after = n_free - int(free[r2]) + int(free_after)
    q_rev = 0.0
    if near[r, a] or free_after:
        q_rev += 1.0 / (near_count[r] - int(near[r, b]) + n_free_after)
    if r2_captured and near[r2, b]:
        q_rev += 1.0 / (near_count[r2] - int(near[r2, a]) + n_free_after)
    if q_rev == 0.0:
        return -np.inf
    return np.log(q_rev) - np.log(q_fwd)


class SwapGeometry:
    """Precomputed neighbourhood structure for the ID swap proposal.

    Whether left row ``l`` lies within ``radius`` of right row ``r`` never
    changes during a chain, so neighbourhood sizes and memberships reduce to
    lookups plus a running count of free slots (all-zero right rows sitting
    on all-zero left rows).
    """

    def __init__(self, data: AugmentedDataset, traps: TrapArray, radius: float):
        self.n_known = nk = data.n_known
        self.M = M = data.M
        self.right_zero = ~data.right.captured
        self.left_zero = ~data.left.captured
        cr = centroids(data.right.counts, traps)
        cl = centroids(data.left.counts, traps)
        with np.errstate(invalid="ignore"):
            d = np.sqrt(((cr[:, None, :] - cl[None, :, :]) ** 2).sum(axis=-1))
        near = d <= radius  # NaN compares False: zero rows are never "near"
        near[:, :nk] = False
        self.near = near
        self.near_count = near.sum(axis=1).astype(np.int64)
        # row r lists its near left rows in ascending order, padded with -1
        self.near_lists = np.full((M, max(1, int(self.near_count.max(initial=0)))), -1, dtype=np.int64)
        for r in range(M):
            idx = np.flatnonzero(near[r])
            self.near_lists[r, : len(idx)] = idx
        self.proposable = np.flatnonzero(~self.right_zero[nk:]) + nk

    def free_mask(self, perm: np.ndarray) -> np.ndarray:
        free = self.right_zero & self.left_zero[perm]
        free[: self.n_known] = False
        return free

    def size(self, r: int, perm: np.ndarray, n_free: int) -> int:
        """|C(r)| for a captured right row ``r``."""
        return int(self.near_count[r] - self.near[r, perm[r]] + n_free)

    def log_hastings(self, r: int, r2: int, perm: np.ndarray, free: np.ndarray, n_free: int) -> float:
        """log q(reverse) - log q(forward) for swapping rows ``r`` and ``r2``.

        ``r`` is the captured row chosen first. When ``r2`` is captured the
        same pair can also be reached by choosing ``r2`` first, so both paths
        enter each proposal probability.
        """
        return float(
            _hastings(
                r, r2, perm, free, n_free, self.near, self.near_count, self.right_zero, self.left_zero
            )
        )
