"""Posterior summaries, ID-match tables, ID-recovery scoring and the replicate study."""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .identity import IdAssignment
from .model import AugmentedDataset, DetectionParams, StateSpace
from .sampler import ChainOutput, SamplerConfig, make_rng, run_chain, run_heuristic
from .simulator import perfect_dataset, scramble, simulate, square_grid

log = logging.getLogger(__name__)

QUANTILES = (2.5, 25.0, 50.0, 75.0, 97.5)
QUANTILE_METHOD = "linear"  # numpy default, Hyndman-Fan type 7
PARAMETERS = ("lambda0", "sigma", "psi", "N")
NEW = "NEW"


@dataclass(frozen=True)
class ParameterSummary:
    mean: float
    sd: float
    quantiles: tuple[float, ...]
    mode: int | None = None


@dataclass(frozen=True)
class PosteriorSummary:
    params: dict  # name -> ParameterSummary
    n_draws: int

    def __getitem__(self, name: str) -> ParameterSummary:
        return self.params[name]

    def rows(self) -> list[list]:
        """Rows of parameter, mean, SD, 2.5%, 25%, 50%, 75%, 97.5%, mode."""
        out = []
        for name, s in self.params.items():
            out.append([name, s.mean, s.sd, *s.quantiles, "" if s.mode is None else s.mode])
        return out


def integer_mode(values) -> int:
    """Most frequent value; the smallest one on ties."""
    vals, counts = np.unique(np.asarray(values, dtype=np.int64), return_counts=True)
    return int(vals[np.argmax(counts)])


def summarize_values(x, integer: bool = False) -> ParameterSummary:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty chain")
    mode = integer_mode(x) if integer else None
    if np.all(x == x[0]):
        # exact moments for a constant chain, free of summation rounding
        v = float(x[0])
        return ParameterSummary(v, 0.0, (v,) * len(QUANTILES), mode)
    sd = float(np.std(x, ddof=1))
    q = tuple(float(v) for v in np.percentile(x, QUANTILES, method=QUANTILE_METHOD))
    return ParameterSummary(float(x.mean()), sd, q, mode)


def summarize(chain: ChainOutput | np.ndarray) -> PosteriorSummary:
    samples = chain.samples if isinstance(chain, ChainOutput) else chain
    if len(samples) < 2:
        raise ValueError("need at least 2 post-burnin samples")
    params = {name: summarize_values(samples[name], integer=(name == "N")) for name in PARAMETERS}
    return PosteriorSummary(params, len(samples))


@dataclass(frozen=True)
class IdMatchTable:
    right_index: int
    rows: list  # (left index or NEW, count), most frequent first
    total: int

    def as_dict(self) -> dict:
        return dict(self.rows)


def _require_ids(chain: ChainOutput):
    if chain.id_samples is None or chain.id_rows is None:
        raise ValueError("chain has no recorded ID samples")


def _draws_for(chain: ChainOutput, right_index: int) -> np.ndarray:
    col = np.flatnonzero(chain.id_rows == right_index)
    if len(col) == 0:
        raise ValueError(f"right row {right_index} is not a tracked captured row")
    return chain.id_samples[:, col[0]]


def _left_captured(data) -> np.ndarray:
    if isinstance(data, AugmentedDataset):
        return data.left.captured
    return np.asarray(data, dtype=bool)


def id_match_table(chain: ChainOutput, right_index: int, data) -> IdMatchTable:
    """Posterior frequency of each left row for one right row; uncaptured left rows pooled as NEW.

    ``data`` is the fitted AugmentedDataset or a boolean capture mask over left rows.
    """
    _require_ids(chain)
    draws = _draws_for(chain, right_index)
    captured = _left_captured(data)
    counts = Counter()
    for left in draws:
        counts[int(left) if captured[left] else NEW] += 1
    rows = sorted(counts.items(), key=lambda kv: (-kv[1], (kv[0] == NEW, kv[0] if kv[0] != NEW else 0)))
    return IdMatchTable(int(right_index), rows, int(len(draws)))


@dataclass(frozen=True)
class RecoveryReport:
    per_row: dict  # right index -> posterior probability of the true match
    modal_correct: dict  # right index -> bool
    mean_probability: float
    fraction_modal_correct: float


def score_id_recovery(
    chain: ChainOutput, answer_key: IdAssignment, data: AugmentedDataset, rows=None
) -> RecoveryReport:
    """Posterior mass on the true left row for each tracked right row.

    When the true left row has no captures the target is the NEW category,
    because all-zero left rows are exchangeable.
    """
    _require_ids(chain)
    if answer_key.M != data.M:
        raise ValueError("answer key does not match the dataset")
    captured = data.left.captured
    rows = chain.id_rows if rows is None else np.asarray(rows)
    per_row, modal = {}, {}
    for r in rows:
        draws = _draws_for(chain, int(r))
        truth = int(answer_key.perm[r])
        cats = np.where(captured[draws], draws, -1)
        target = truth if captured[truth] else -1
        per_row[int(r)] = float(np.mean(cats == target))
        vals, cnt = np.unique(cats, return_counts=True)
        modal[int(r)] = bool(vals[np.argmax(cnt)] == target)
    n = len(per_row)
    return RecoveryReport(
        per_row,
        modal,
        float(np.mean(list(per_row.values()))) if n else float("nan"),
        float(np.mean(list(modal.values()))) if n else float("nan"),
    )


# --------------------------------------------------------------------------
# replicate study


@dataclass(frozen=True)
class Scenario:
    N: int
    lambda0: float
    sigma: float
    K: int
    M: int
    grid_n: int = 5
    buffer: float = 2.0
    name: str = ""

    @property
    def label(self) -> str:
        return self.name or f"N={self.N},sigma={self.sigma},lambda0={self.lambda0}"


@dataclass(frozen=True)
class Estimator:
    name: str
    mode: str
    n_known: int = 0


STUDY_ESTIMATORS = (
    Estimator("nID=0", "full", 0),
    Estimator("nID=10", "known_id", 10),
    Estimator("nID=all", "all_known", 0),
    Estimator("heur", "heuristic", 0),
)


def study_grid_scenarios(K: int, M_per_N: float = 2.0) -> list[Scenario]:
    """The 2 x 2 x 2 factorial grid of N, sigma and lambda0."""
    out = []
    for N in (120, 80):
        for sigma in (0.7, 0.5):
            for lam in (0.2, 0.1):
                out.append(Scenario(N, lam, sigma, K, int(round(M_per_N * N))))
    return out


@dataclass(frozen=True)
class ReplicateResult:
    scenario: int
    estimator: int
    replicate: int
    N_true: int
    mean: float
    sd: float
    mode: int
    lower: float
    upper: float
    n_left: int
    n_right: int
    N_counts: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def covered(self) -> bool:
        return self.lower <= self.N_true <= self.upper


@dataclass(frozen=True)
class StudyMetrics:
    scenario: str
    estimator: str
    R: int
    mean: float
    sd_mean: float
    mode: float
    sd_mode: float
    post_sd: float
    coverage: float
    pmode: int

    COLUMNS = ("scenario", "estimator", "R", "mean", "sd_mean", "mode", "sd_mode", "postSD", "95cover", "pmode")

    def row(self) -> list:
        return [
            self.scenario,
            self.estimator,
            self.R,
            self.mean,
            self.sd_mean,
            self.mode,
            self.sd_mode,
            self.post_sd,
            self.coverage,
            self.pmode,
        ]


def fit_replicate(scenario: Scenario, estimator: Estimator, replicate: int, config: SamplerConfig, master_seed: int,
                  scenario_index: int = 0, estimator_index: int = 0) -> ReplicateResult:
    """Simulate one data set and fit one estimator to it.

    The population is drawn from a stream keyed on (scenario, replicate), so all
    estimators in a replicate see the same realisation.
    """
    traps = square_grid(scenario.grid_n)
    space = StateSpace.around(traps, scenario.buffer)
    params = DetectionParams(scenario.lambda0, scenario.sigma)
    truth = simulate(scenario.N, traps, space, params, scenario.K, make_rng(master_seed, scenario_index, replicate, 0))
    rng = make_rng(master_seed, scenario_index, replicate, estimator_index + 1)
    chain_seed = int(rng.integers(2**63))
    cfg = replace(config, mode=estimator.mode, seed=chain_seed, record_id_samples=False)
    if estimator.mode == "all_known":
        data = perfect_dataset(truth, scenario.M)
    else:
        data, _ = scramble(truth, estimator.n_known, scenario.M, rng)
    if estimator.mode == "heuristic":
        chain = run_heuristic(data.left, data.right, traps, space, cfg)
    else:
        chain = run_chain(data, traps, space, cfg)
    N = chain.N
    s = summarize_values(N, integer=True)
    vals, cnt = np.unique(N, return_counts=True)
    return ReplicateResult(
        scenario_index, estimator_index, replicate, scenario.N, s.mean, s.sd, s.mode,
        s.quantiles[0], s.quantiles[-1], data.n_left, data.n_right,
        {int(v): int(c) for v, c in zip(vals, cnt)},
    )


def _safe_fit(args) -> ReplicateResult:
    fitter, scenario, estimator, rep, config, master_seed, si, ei = args
    try:
        return fitter(scenario, estimator, rep, config, master_seed, si, ei)
    except Exception as exc:  # recorded and excluded from the aggregates
        nan = float("nan")
        return ReplicateResult(si, ei, rep, scenario.N, nan, nan, -1, nan, nan, -1, -1, {}, repr(exc))


def aggregate(results: list[ReplicateResult], scenario: Scenario, estimator: Estimator) -> StudyMetrics:
    ok = sorted((r for r in results if r.error is None), key=lambda r: r.replicate)
    if len(ok) < 2:
        raise ValueError(f"fewer than 2 successful replicates for {scenario.label} / {estimator.name}")
    means = np.array([r.mean for r in ok])
    modes = np.array([r.mode for r in ok], dtype=float)
    pooled = Counter()
    for r in ok:
        pooled.update(r.N_counts)
    top = max(pooled.values())
    pmode = min(k for k, v in pooled.items() if v == top)
    return StudyMetrics(
        scenario.label,
        estimator.name,
        len(ok),
        float(means.mean()),
        float(means.std(ddof=1)),
        float(modes.mean()),
        float(modes.std(ddof=1)),
        float(np.mean([r.sd for r in ok])),
        float(np.mean([r.covered for r in ok])),
        int(pmode),
    )


def run_study(
    scenarios: list[Scenario],
    estimators: list[Estimator],
    R: int,
    config: SamplerConfig,
    master_seed: int,
    workers: int = 1,
    progress=None,
    fitter=fit_replicate,
) -> tuple[list[StudyMetrics], list[ReplicateResult]]:
    """Simulate R data sets per scenario, fit every estimator, aggregate.

    Every replicate owns a seed derived from (master_seed, scenario, replicate,
    estimator), so results do not depend on scheduling or worker count.
    """
    if R < 2:
        raise ValueError("R must be >= 2")
    jobs = [
        (fitter, sc, est, rep, config, master_seed, si, ei)
        for si, sc in enumerate(scenarios)
        for ei, est in enumerate(estimators)
        for rep in range(R)
    ]
    results = []
    if workers <= 1:
        for job in jobs:
            results.append(_safe_fit(job))
            if progress:
                progress(len(results), len(jobs))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_safe_fit, jobs):
                results.append(res)
                if progress:
                    progress(len(results), len(jobs))
    results.sort(key=lambda r: (r.scenario, r.estimator, r.replicate))
    metrics = []
    for si, sc in enumerate(scenarios):
        for ei, est in enumerate(estimators):
            group = [r for r in results if r.scenario == si and r.estimator == ei]
            failed = [r for r in group if r.error is not None]
            if failed:
                warnings.warn(f"{len(failed)} failed replicate(s) excluded for {sc.label} / {est.name}", stacklevel=2)
                for r in failed:
                    log.warning("replicate %d failed: %s", r.replicate, r.error)
            metrics.append(aggregate(group, sc, est))
    return metrics, results
