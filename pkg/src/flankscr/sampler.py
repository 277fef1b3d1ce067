"""Metropolis-within-Gibbs sampler for SCR with a latent left/right identity."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numba import njit

from .identity import IdAssignment, SwapGeometry, _hastings, centroids, greedy_init, reorder_right
from .model import (
    AugmentedDataset,
    DetectionParams,
    EncounterMatrix,
    StateSpace,
    TrapArray,
    hazard_kernel,
    row_constants,
    row_terms,
    squared_distances_fast,
)

MODES = ("full", "known_id", "all_known", "heuristic")

N_DEFINITIONS = {
    "full": "N = sum(z)",
    "all_known": "N = sum(z)",
    "known_id": "N = n_known + sum(z[n_known:])",
    "heuristic": "N = floor((sum(z_left) + sum(z_right)) / 2 + 0.5)",
}


@dataclass
class SamplerConfig:
    iters: int = 21000
    burnin: int = 1000
    thin: int = 1
    M: Optional[int] = None
    proposal_sd_log_lambda0: float = 0.1
    proposal_sd_log_sigma: float = 0.1
    proposal_sd_s: float = 0.5
    n_swaps_per_iter: int = 50
    swap_radius: Optional[float] = None
    prior_upper_lambda0: float = 5.0
    prior_upper_sigma: Optional[float] = None
    mode: str = "full"
    record_id_samples: bool = False
    seed: Optional[int] = None
    # test hooks: finite support for s, frozen detection parameters
    s_grid: Optional[list] = None
    fixed_params: Optional[tuple[float, float]] = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 <= self.burnin < self.iters:
            raise ValueError("need 0 <= burnin < iters")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_swaps_per_iter < 0:
            raise ValueError("n_swaps_per_iter must be >= 0")
        for name in ("proposal_sd_log_lambda0", "proposal_sd_log_sigma", "proposal_sd_s", "prior_upper_lambda0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("swap_radius", "prior_upper_sigma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    def resolved(self, space: StateSpace) -> "SamplerConfig":
        """Copy with every data-dependent default filled in."""
        self.validate()
        upper_sigma = self.prior_upper_sigma or 0.5 * space.diagonal
        radius = self.swap_radius or 3.0 * 0.5 * upper_sigma
        seed = self.seed if self.seed is not None else int(np.random.SeedSequence().entropy % 2**63)
        return replace(self, prior_upper_sigma=upper_sigma, swap_radius=radius, seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)


class _Block:
    """One SCR likelihood component: counts sharing z and activity centres.

    The paired model uses one block holding left + reordered right counts
    (``sides=2``); the heuristic estimator uses two one-sided blocks.
    """

    def __init__(self, y, const, sides, z, s, pinned, counted):
        self.y = np.asarray(y, dtype=float)
        self.const = np.asarray(const, dtype=float)
        self.captured = self.y.sum(axis=1) > 0
        self.sides = sides
        self.z = np.asarray(z, dtype=bool)
        self.s = np.asarray(s, dtype=float)
        self.pinned = pinned  # z held at 1
        self.counted = counted  # rows contributing to psi and N
        self.d2 = None
        self.log_odds = None
        self.hsum = None
        self.row_ll = None

    def copy(self) -> "_Block":
        b = _Block.__new__(_Block)
        for k, v in self.__dict__.items():
            setattr(b, k, v.copy() if isinstance(v, np.ndarray) else v)
        return b

    def kernel(self, params: DetectionParams, K: int, d2=None):
        d2 = self.d2 if d2 is None else d2
        return hazard_kernel(d2, math.log(params.lambda0), 1.0 / (2.0 * params.sigma**2), float(K))

    def refresh(self, traps: TrapArray, params: DetectionParams, K: int) -> None:
        self.d2 = squared_distances_fast(self.s, traps.coords)
        self.log_odds, self.hsum = self.kernel(params, K)
        self.recompute_rows()

    def recompute_rows(self) -> None:
        self.row_ll = row_terms(self.y, self.const, self.captured, self.z, self.log_odds, self.hsum, self.sides)


@dataclass
class LatentState:
    params: DetectionParams
    psi: float
    blocks: list
    id: Optional[np.ndarray]  # perm[r] = left row of right row r; None for the heuristic
    right_star: Optional[np.ndarray]
    grid_index: Optional[np.ndarray] = None

    @property
    def z(self) -> np.ndarray:
        return self.blocks[0].z

    @property
    def s(self) -> np.ndarray:
        return self.blocks[0].s

    @property
    def loglik(self) -> float:
        return float(sum(b.row_ll.sum() for b in self.blocks))

    def copy(self) -> "LatentState":
        return LatentState(
            self.params,
            self.psi,
            [b.copy() for b in self.blocks],
            None if self.id is None else self.id.copy(),
            None if self.right_star is None else self.right_star.copy(),
            None if self.grid_index is None else self.grid_index.copy(),
        )


@dataclass
class ChainOutput:
    samples: np.ndarray  # structured: iter, lambda0, sigma, psi, N, loglik
    id_samples: Optional[np.ndarray] = None  # (n_records, len(id_rows)) left row per draw
    id_rows: Optional[np.ndarray] = None  # captured right rows tracked in id_samples
    id_iters: Optional[np.ndarray] = None
    acceptance: dict = field(default_factory=dict)
    mode: str = "full"
    config: Optional[dict] = None

    @property
    def N(self) -> np.ndarray:
        return self.samples["N"]

    def column(self, name: str) -> np.ndarray:
        return self.samples[name]

    def id_long(self) -> np.ndarray:
        """(iter, right_index, left_index) rows, 0-based indices."""
        if self.id_samples is None:
            return np.zeros((0, 3), dtype=np.int64)
        n, m = self.id_samples.shape
        it = np.repeat(self.id_iters, m)
        r = np.tile(self.id_rows, n)
        return np.column_stack([it, r, self.id_samples.ravel()]).astype(np.int64)


SAMPLE_DTYPE = np.dtype(
    [("iter", "i8"), ("lambda0", "f8"), ("sigma", "f8"), ("psi", "f8"), ("N", "i8"), ("loglik", "f8")]
)


class _Acceptance:
    def __init__(self, *names):
        self.tries = dict.fromkeys(names, 0)
        self.accepts = dict.fromkeys(names, 0)

    def add(self, name, tries, accepts):
        self.tries[name] += tries
        self.accepts[name] += accepts

    def rates(self) -> dict:
        return {k: (self.accepts[k] / self.tries[k] if self.tries[k] else float("nan")) for k in self.tries}


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for ``(seed, *keys)``, e.g. (master_seed, replicate)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def _grid_array(config: SamplerConfig) -> Optional[np.ndarray]:
    if config.s_grid is None:
        return None
    g = np.asarray(config.s_grid, dtype=float).reshape(-1, 2)
    if len(g) == 0:
        raise ValueError("s_grid must not be empty")
    return g


def _initial_params(config: SamplerConfig) -> DetectionParams:
    if config.fixed_params is not None:
        return DetectionParams(*config.fixed_params)
    return DetectionParams(0.5 * config.prior_upper_lambda0, 0.5 * config.prior_upper_sigma)


def _initial_centres(ysum, traps, space, rng, grid):
    M = ysum.shape[0]
    cent = centroids(ysum, traps)
    missing = np.isnan(cent[:, 0])
    draws = space.uniform(rng, M)
    s = np.where(missing[:, None], draws, cent)
    gidx = None
    if grid is not None:
        d = ((s[:, None, :] - grid[None, :, :]) ** 2).sum(axis=-1)
        gidx = d.argmin(axis=1)
        s = grid[gidx].copy()
    return s, gidx


def _initial_z(captured, pinned, rng):
    z = rng.random(captured.shape[0]) < 0.5
    return z | captured | pinned


def initialize(
    data: AugmentedDataset,
    traps: TrapArray,
    space: StateSpace,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> LatentState:
    """Starting state: greedy IDs, z=1 on captured rows, s at capture centroids."""
    if config.mode == "heuristic":
        raise ValueError("use initialize_heuristic for the heuristic estimator")
    if config.prior_upper_sigma is None or config.swap_radius is None:
        config = config.resolved(space)
    M, K, nk = data.M, data.K, data.n_known
    grid = _grid_array(config)

    if config.mode == "all_known":
        perm = np.arange(M)
    else:
        perm = greedy_init(data, traps).perm.copy()
        _release_far_matches(perm, data, traps, config.swap_radius)
    right_star = reorder_right(data.right, IdAssignment(perm, nk))

    ysum = data.left.counts + right_star
    const = row_constants(data.left.counts, K) + row_constants(right_star, K)
    pinned = np.zeros(M, dtype=bool)
    counted = np.ones(M, dtype=bool)
    if config.mode == "known_id":
        pinned[:nk] = True
        counted[:nk] = False
    captured = ysum.sum(axis=1) > 0
    z = _initial_z(captured, pinned, rng)
    s, gidx = _initial_centres(ysum, traps, space, rng, grid)
    block = _Block(ysum, const, 2, z, s, pinned, counted)
    params = _initial_params(config)
    block.refresh(traps, params, K)
    psi = (block.z[counted].sum() + 1.0) / (counted.sum() + 2.0)
    state = LatentState(params, float(psi), [block], perm, right_star, gidx)
    if not np.isfinite(state.loglik):
        raise RuntimeError("internal error: initial state has zero likelihood")
    return state


def _release_far_matches(perm, data, traps, radius):
    """Move captured right rows greedily matched beyond ``radius`` onto free all-zero left rows.

    A right row sitting on a captured left row outside its neighbourhood could
    never be swapped back there, so such starts are replaced.
    """
    nk = data.n_known
    cr = centroids(data.right.counts, traps)
    cl = centroids(data.left.counts, traps)
    left_zero = ~data.left.captured
    right_zero = ~data.right.captured
    for r in range(nk, data.n_right):
        a = perm[r]
        if left_zero[a] or np.hypot(*(cr[r] - cl[a])) <= radius:
            continue
        # an all-zero right row currently holding an all-zero left row
        holders = np.flatnonzero(right_zero & left_zero[perm])
        holders = holders[holders >= nk]
        if len(holders) == 0:
            continue
        h = holders[0]
        perm[r], perm[h] = perm[h], perm[r]


def initialize_heuristic(
    left: EncounterMatrix,
    right: EncounterMatrix,
    traps: TrapArray,
    space: StateSpace,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> LatentState:
    if left.shape != right.shape or left.K != right.K:
        raise ValueError("left and right must both be augmented to the same M x J with equal K")
    if config.prior_upper_sigma is None or config.swap_radius is None:
        config = config.resolved(space)
    M, K = left.shape[0], left.K
    grid = _grid_array(config)
    params = _initial_params(config)
    blocks = []
    for mat in (left, right):
        y = mat.counts
        pinned = np.zeros(M, dtype=bool)
        counted = np.ones(M, dtype=bool)
        z = _initial_z(y.sum(axis=1) > 0, pinned, rng)
        s, _ = _initial_centres(y, traps, space, rng, grid)
        b = _Block(y, row_constants(y, K), 1, z, s, pinned, counted)
        b.refresh(traps, params, K)
        blocks.append(b)
    A = sum(b.z.sum() for b in blocks)
    psi = (A + 1.0) / (2 * M + 2.0)
    return LatentState(params, float(psi), blocks, None, None, None)


# --------------------------------------------------------------------------
# updates


def update_detection_params(state, traps, K, config, rng, acc=None):
    """Log-scale random walk on lambda0 then sigma, uniform priors on (0, upper]."""
    if config.fixed_params is not None:
        return state
    for name, sd, upper in (
        ("lambda0", config.proposal_sd_log_lambda0, config.prior_upper_lambda0),
        ("sigma", config.proposal_sd_log_sigma, config.prior_upper_sigma),
    ):
        cur = getattr(state.params, name)
        eps = rng.standard_normal()
        u = rng.random()
        prop = cur * math.exp(sd * eps)
        accepted = False
        if prop <= upper:
            new_params = replace(state.params, **{name: prop})
            kernels = [b.kernel(new_params, K) for b in state.blocks]
            rows = [
                row_terms(b.y, b.const, b.captured, b.z, lo, hs, b.sides) for b, (lo, hs) in zip(state.blocks, kernels)
            ]
            new_ll = float(sum(r.sum() for r in rows))
            # Jacobian of the log-scale walk keeps the prior flat on the natural scale
            log_ratio = new_ll - state.loglik + math.log(prop / cur)
            if np.isfinite(new_ll) and (log_ratio >= 0 or u < math.exp(log_ratio)):
                state.params = new_params
                for b, (lo, hs), r in zip(state.blocks, kernels, rows):
                    b.log_odds, b.hsum, b.row_ll = lo, hs, r
                accepted = True
        if acc is not None:
            acc.add(name, 1, int(accepted))
    return state


def update_psi(state, config, rng):
    A = B = 0
    for b in state.blocks:
        n = int(b.counted.sum())
        a = int(b.z[b.counted].sum())
        A += a
        B += n - a
    state.psi = float(rng.beta(1.0 + A, 1.0 + B))
    return state


def update_z(state, config, rng):
    """Gibbs update of inclusion indicators for rows with no capture on any side."""
    psi = state.psi
    for b in state.blocks:
        free = ~(b.captured | b.pinned)
        u = rng.random(b.z.shape[0])
        # P(all-zero history | z=1) = exp(-sides * K * sum_j h)
        q = np.exp(-b.sides * b.hsum)
        p_on = psi * q / (psi * q + 1.0 - psi)
        new_z = np.where(free, u < p_on, b.z)
        changed = new_z != b.z
        if changed.any():
            b.z = new_z
            b.row_ll = np.where(changed, row_terms(b.y, b.const, b.captured, b.z, b.log_odds, b.hsum, b.sides), b.row_ll)
    return state


def update_activity_centers(state, traps, space, K, config, rng, acc=None, grid=None):
    """Per-row random-walk Metropolis on s; rows are conditionally independent."""
    for b in state.blocks:
        M = b.s.shape[0]
        if grid is None:
            prop = b.s + config.proposal_sd_s * rng.standard_normal((M, 2))
            inside = space.contains(prop)
        else:
            gidx = rng.integers(0, len(grid), size=M)
            prop = grid[gidx]
            inside = np.ones(M, dtype=bool)
        u = rng.random(M)
        d2 = squared_distances_fast(prop, traps.coords)
        lo, hs = b.kernel(state.params, K, d2)
        new_rows = row_terms(b.y, b.const, b.captured, b.z, lo, hs, b.sides)
        with np.errstate(invalid="ignore"):
            log_ratio = new_rows - b.row_ll
        accept = inside & (np.log(u) < log_ratio)
        if grid is None:
            # z=0 rows: exact draw from the uniform conditional
            off = ~b.z
            if off.any():
                redraw = space.uniform(rng, int(off.sum()))
                prop[off] = redraw
                d2_off = squared_distances_fast(redraw, traps.coords)
                lo_off, hs_off = b.kernel(state.params, K, d2_off)
                d2[off], lo[off], hs[off] = d2_off, lo_off, hs_off
                new_rows[off] = 0.0
                accept = accept | off
        if acc is not None:
            on = b.z
            acc.add("s", int(on.sum()), int((accept & on).sum()))
        b.s = np.where(accept[:, None], prop, b.s)
        b.d2 = np.where(accept[:, None], d2, b.d2)
        b.log_odds = np.where(accept[:, None], lo, b.log_odds)
        b.hsum = np.where(accept, hs, b.hsum)
        b.row_ll = np.where(accept, new_rows, b.row_ll)
        if grid is not None and b is state.blocks[0] and state.grid_index is not None:
            state.grid_index = np.where(accept, gidx, state.grid_index)
    return state


class _SwapContext:
    def __init__(self, data: AugmentedDataset, traps: TrapArray, radius: float):
        self.geom = SwapGeometry(data, traps, radius)
        self.right = data.right.counts
        self.left = data.left.counts
        self.left_const = row_constants(self.left, data.K)
        self.right_const = row_constants(self.right, data.K)
        width = max(1, int((self.right > 0).sum(axis=1).max(initial=0)))
        self.nz_idx = np.zeros((data.M, width), dtype=np.int64)
        self.nz_val = np.zeros((data.M, width))
        self.nz_len = np.zeros(data.M, dtype=np.int64)
        for r, row in enumerate(self.right):
            j = np.flatnonzero(row)
            self.nz_idx[r, : len(j)] = j
            self.nz_val[r, : len(j)] = row[j]
            self.nz_len[r] = len(j)


@njit(cache=True)
def _swap_kernel(
    perm, inv, free, rows, pick_r, u_pick, u_acc, near, near_count, near_lists,
    right_zero, left_zero, z, log_odds, nz_idx, nz_val, nz_len, touched,
):
    n_free = 0
    for k in range(free.shape[0]):
        n_free += free[k]
    accepts = 0
    for t in range(pick_r.shape[0]):
        r = rows[pick_r[t]]
        a = perm[r]
        n_near = near_count[r] - int(near[r, a])
        size = n_near + n_free
        if size == 0:
            continue
        u = min(int(u_pick[t] * size), size - 1)
        if u < n_near:
            l = near_lists[r, u]
            if near[r, a] and l >= a:
                l = near_lists[r, u + 1]
            r2 = inv[l]
        else:
            u -= n_near
            r2 = -1
            for k in range(free.shape[0]):
                if free[k]:
                    if u == 0:
                        r2 = k
                        break
                    u -= 1
        b = perm[r2]
        # captured right row r would land on left row b
        if not z[b]:
            continue
        # with both rows switched on, binomial constants and hazard sums cancel
        delta = 0.0
        for q in range(nz_len[r2]):
            j = nz_idx[r2, q]
            delta += nz_val[r2, q] * (log_odds[a, j] - log_odds[b, j])
        for q in range(nz_len[r]):
            j = nz_idx[r, q]
            delta -= nz_val[r, q] * (log_odds[a, j] - log_odds[b, j])
        log_ratio = delta + _hastings(r, r2, perm, free, n_free, near, near_count, right_zero, left_zero)
        if not (log_ratio >= 0.0 or u_acc[t] < np.exp(log_ratio)):
            continue
        accepts += 1
        perm[r] = b
        perm[r2] = a
        inv[b] = r
        inv[a] = r2
        touched[a] = True
        touched[b] = True
        was_free = free[r2]
        free[r2] = right_zero[r2] and left_zero[a]
        n_free += int(free[r2]) - int(was_free)
    return accepts


def update_ids(state, ctx: _SwapContext, config, rng, acc=None):
    """Pairwise ID swaps with a distance-neighbourhood proposal.

    Random numbers for all swaps of the sweep are drawn up front, so the
    stream consumed per sweep is fixed.
    """
    geom = ctx.geom
    rows = geom.proposable
    n = config.n_swaps_per_iter
    if len(rows) == 0 or n == 0:
        return state
    pick_r = rng.integers(len(rows), size=n)
    u_pick = rng.random(n)
    u_acc = rng.random(n)
    b = state.blocks[0]
    perm = state.id
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0])
    touched = np.zeros(perm.shape[0], dtype=np.bool_)
    accepts = _swap_kernel(
        perm, inv, geom.free_mask(perm), rows, pick_r, u_pick, u_acc, geom.near, geom.near_count,
        geom.near_lists, geom.right_zero, geom.left_zero, b.z, b.log_odds, ctx.nz_idx, ctx.nz_val,
        ctx.nz_len, touched,
    )
    if accepts:
        idx = np.flatnonzero(touched)
        src = inv[idx]
        state.right_star[idx] = ctx.right[src]
        b.y[idx] = ctx.left[idx] + ctx.right[src]
        b.captured[idx] = b.y[idx].any(axis=1)
        b.const[idx] = ctx.left_const[idx] + ctx.right_const[src]
        b.row_ll[idx] = row_terms(
            b.y[idx], b.const[idx], b.captured[idx], b.z[idx], b.log_odds[idx], b.hsum[idx], b.sides
        )
    if acc is not None:
        acc.add("id", n, accepts)
    return state


def _record_N(state, mode, n_known):
    if mode == "heuristic":
        tot = int(state.blocks[0].z.sum() + state.blocks[1].z.sum())
        return int(math.floor(tot / 2 + 0.5))
    if mode == "known_id":
        return n_known + int(state.blocks[0].z[n_known:].sum())
    return int(state.blocks[0].z.sum())


def _sweep_loop(state, traps, space, K, config, rng, swap_ctx, n_known, callback, progress_every):
    grid = _grid_array(config)
    acc = _Acceptance("lambda0", "sigma", "id", "s")
    n_rec = (config.iters - config.burnin) // config.thin
    samples = np.zeros(n_rec, dtype=SAMPLE_DTYPE)
    id_rows = None
    id_store = id_iters = None
    if swap_ctx is not None and config.record_id_samples:
        id_rows = swap_ctx.geom.proposable.copy()
        id_store = np.zeros((n_rec, len(id_rows)), dtype=np.int64)
        id_iters = np.zeros(n_rec, dtype=np.int64)
    k = 0
    for it in range(1, config.iters + 1):
        update_detection_params(state, traps, K, config, rng, acc)
        if swap_ctx is not None:
            update_ids(state, swap_ctx, config, rng, acc)
        update_z(state, config, rng)
        update_psi(state, config, rng)
        update_activity_centers(state, traps, space, K, config, rng, acc, grid)
        if it > config.burnin and (it - config.burnin) % config.thin == 0:
            samples[k] = (
                it,
                state.params.lambda0,
                state.params.sigma,
                state.psi,
                _record_N(state, config.mode, n_known),
                state.loglik,
            )
            if id_store is not None:
                id_store[k] = state.id[id_rows]
                id_iters[k] = it
            k += 1
        if callback is not None and it % progress_every == 0:
            callback(it, acc.rates())
    return ChainOutput(
        samples=samples,
        id_samples=id_store,
        id_rows=id_rows,
        id_iters=id_iters,
        acceptance=acc.rates(),
        mode=config.mode,
        config=config.to_dict(),
    )


def run_chain(
    data: AugmentedDataset,
    traps: TrapArray,
    space: StateSpace,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
    callback: Callable[[int, dict], None] | None = None,
    progress_every: int = 1000,
) -> ChainOutput:
    """Run the latent-ID sampler (modes full, known_id, all_known)."""
    if config.mode == "heuristic":
        raise ValueError("use run_heuristic for the heuristic estimator")
    if traps.J != data.J:
        raise ValueError("trap count does not match the encounter matrices")
    if config.mode == "all_known" and not (data.n_known == data.n_left == data.n_right):
        raise ValueError("all_known mode needs a fully paired dataset (n_known = n_left = n_right)")
    config = config.resolved(space)
    rng = rng if rng is not None else make_rng(config.seed)
    state = initialize(data, traps, space, config, rng)
    swap_ctx = None if config.mode == "all_known" else _SwapContext(data, traps, config.swap_radius)
    return _sweep_loop(state, traps, space, data.K, config, rng, swap_ctx, data.n_known, callback, progress_every)


def run_heuristic(
    left: EncounterMatrix,
    right: EncounterMatrix,
    traps: TrapArray,
    space: StateSpace,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
    callback: Callable[[int, dict], None] | None = None,
    progress_every: int = 1000,
) -> ChainOutput:
    """Left and right treated as independent samples sharing lambda0, sigma and psi."""
    config = replace(config, mode="heuristic", record_id_samples=False).resolved(space)
    if traps.J != left.shape[1]:
        raise ValueError("trap count does not match the encounter matrices")
    rng = rng if rng is not None else make_rng(config.seed)
    state = initialize_heuristic(left, right, traps, space, config, rng)
    return _sweep_loop(state, traps, space, left.K, config, rng, None, 0, callback, progress_every)
