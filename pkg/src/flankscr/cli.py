"""Command-line entry point.

Every subcommand accepts ``--config FILE.json``; keys use the long-flag names
with underscores, and flags given on the command line override the file.
Failures print one line ``error: <kind>: <message>`` to stderr and exit 1
(usage errors exit 2).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .analysis import (
    NEW,
    STUDY_ESTIMATORS,
    QUANTILE_METHOD,
    Scenario,
    id_match_table,
    study_grid_scenarios,
    run_study,
    summarize,
)
from .identity import canonicalize
from .model import AugmentedDataset, DetectionParams, StateSpace
from .sampler import N_DEFINITIONS, SamplerConfig, make_rng, run_chain, run_heuristic
from .simulator import scramble, simulate, square_grid


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 1):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, code=2)


# sampler flags: config field -> (type, help)
_SAMPLER_FLAGS = {
    "iters": (int, "total iterations"),
    "burnin": (int, "iterations discarded before recording"),
    "thin": (int, "record every thin-th iteration after burn-in"),
    "M": (int, "augmented size (default 2 x observed rows, at least observed + 1)"),
    "proposal_sd_log_lambda0": (float, "random-walk sd on log lambda0"),
    "proposal_sd_log_sigma": (float, "random-walk sd on log sigma"),
    "proposal_sd_s": (float, "random-walk sd for activity centres"),
    "n_swaps_per_iter": (int, "identity swap proposals per iteration"),
    "swap_radius": (float, "neighbourhood radius for identity swaps"),
    "prior_upper_lambda0": (float, "upper bound of the uniform prior on lambda0"),
    "prior_upper_sigma": (float, "upper bound of the uniform prior on sigma"),
    "seed": (int, "RNG seed (auto-generated and recorded if omitted)"),
}


def _add_sampler_flags(p):
    g = p.add_argument_group("sampler")
    for name, (typ, help_) in _SAMPLER_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, help=help_)
    g.add_argument("--record-ids", dest="record_id_samples", action="store_const", const=True,
                   help="write id_samples.csv")


def _add_common(p):
    p.add_argument("--config", help="JSON file of option values")


def _add_data_flags(p, heuristic=False):
    p.add_argument("--traps", help="trap CSV (trap_id,x,y)")
    p.add_argument("--left", help="left encounter CSV (t1..tJ)")
    p.add_argument("--right", help="right encounter CSV (t1..tJ)")
    p.add_argument("--K", type=int, help="number of occasions")
    p.add_argument("--buffer", type=float, help="state-space buffer around the traps")
    if not heuristic:
        p.add_argument("--n-known", dest="n_known", type=int, help="leading rows matched on both sides")
        p.add_argument("--mode", choices=("full", "known_id", "all_known"))
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flankscr", description="Spatial capture-recapture with two-sided (left/right) marks.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="simulate a population and its scrambled left/right data")
    _add_common(p)
    p.add_argument("--traps", help="trap CSV; default is a square grid")
    p.add_argument("--grid-n", dest="grid_n", type=int, help="side length of the default square grid")
    p.add_argument("--N", type=int)
    p.add_argument("--lambda0", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--n-known", dest="n_known", type=int)
    p.add_argument("--buffer", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("fit", help="fit the latent-identity model")
    _add_common(p)
    _add_data_flags(p)
    _add_sampler_flags(p)

    p = sub.add_parser("fit-heuristic", help="fit the two-independent-samples heuristic")
    _add_common(p)
    _add_data_flags(p, heuristic=True)
    _add_sampler_flags(p)

    p = sub.add_parser("summarize", help="posterior summary table of a chain")
    _add_common(p)
    p.add_argument("--chain", help="chain.csv")
    p.add_argument("--out", help="summary CSV path")

    p = sub.add_parser("id-table", help="posterior ID-match table for one right row")
    _add_common(p)
    p.add_argument("--run", help="output directory of a fit with --record-ids")
    p.add_argument("--right-index", dest="right_index", type=int, help="1-based right row")
    p.add_argument("--out", help="table CSV path")

    p = sub.add_parser("simstudy", help="replicate simulation study")
    _add_common(p)
    p.add_argument("--full-grid", dest="full_grid", action="store_const", const=True,
                   help="the 2x2x2 grid of N, sigma, lambda0 with all four estimators")
    p.add_argument("--N", dest="N_values", type=int, nargs="+")
    p.add_argument("--sigma", dest="sigma_values", type=float, nargs="+")
    p.add_argument("--lambda0", dest="lambda0_values", type=float, nargs="+")
    p.add_argument("--K", type=int)
    p.add_argument("--M-per-N", dest="M_per_N", type=float)
    p.add_argument("--estimators", nargs="+", help="subset of: " + " ".join(e.name for e in STUDY_ESTIMATORS))
    p.add_argument("--R", type=int, help="replicates per cell")
    p.add_argument("--workers", type=int)
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--out")
    _add_sampler_flags(p)
    return parser


_DEFAULTS = {
    "simulate": dict(grid_n=5, lambda0=0.2, sigma=0.5, N=60, K=10, M=None, n_known=0, buffer=2.0, seed=None),
    "fit": dict(buffer=2.0, n_known=0, mode="full"),
    "fit-heuristic": dict(buffer=2.0),
    "summarize": {},
    "id-table": {},
    "simstudy": dict(N_values=[120], sigma_values=[0.7], lambda0_values=[0.2], K=10, M_per_N=2.0,
                     estimators=None, R=20, workers=1, master_seed=0, full_grid=False),
}


def resolve_options(args: argparse.Namespace) -> dict:
    """defaults < config file < command-line flags."""
    cmd = args.command
    given = {k: v for k, v in vars(args).items() if v is not None and k not in ("command", "config")}
    opts = dict(_DEFAULTS[cmd])
    if args.config:
        cfg = _load_json(args.config)
        if not isinstance(cfg, dict):
            raise CliError("config", "config file must hold a JSON object")
        allowed = {a.dest for a in _subparser(cmd)._actions} - {"help", "config"}
        unknown = sorted(set(cfg) - allowed)
        if unknown:
            raise CliError("config", f"unknown config keys: {', '.join(unknown)}")
        opts.update(cfg)
    opts.update(given)
    return opts


def _subparser(cmd):
    parser = build_parser()
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[cmd]
    raise KeyError(cmd)


def _load_json(path):
    try:
        return fio.read_json(path)
    except FileNotFoundError:
        raise CliError("missing-file", f"{path} not found") from None
    except json.JSONDecodeError as exc:
        raise CliError("config", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _require(opts, *names):
    missing = [n for n in names if opts.get(n) is None]
    if missing:
        raise CliError("usage", "missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing),
                       code=2)


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError("missing-file", f"{path} not found")
    return p


def _sampler_config(opts, mode) -> SamplerConfig:
    kw = {f.name: opts[f.name] for f in fields(SamplerConfig) if f.name in opts and f.name != "mode"}
    return SamplerConfig(mode=mode, **kw)


def _default_M(n_obs: int) -> int:
    return max(2 * n_obs, n_obs + 1)


# -- commands ----------------------------------------------------------------


def cmd_simulate(opts) -> None:
    _require(opts, "out")
    traps = fio.parse_traps(_existing(opts["traps"])) if opts.get("traps") else square_grid(opts["grid_n"])
    space = StateSpace.around(traps, opts["buffer"])
    params = DetectionParams(opts["lambda0"], opts["sigma"])
    seed = opts["seed"] if opts["seed"] is not None else int(np.random.SeedSequence().entropy % 2**63)
    truth = simulate(opts["N"], traps, space, params, opts["K"], make_rng(seed, 0))
    n_obs = int(max((truth.left_true.sum(1) > 0).sum(), (truth.right_true.sum(1) > 0).sum()))
    M = opts["M"] if opts["M"] is not None else _default_M(max(n_obs, opts["n_known"]))
    data, key = scramble(truth, opts["n_known"], M, make_rng(seed, 1))
    out = Path(opts["out"])
    fio.write_traps(out / "traps.csv", traps)
    # only the observed rows go to disk; fit re-augments
    fio.write_encounters(out / "left.csv", data.left.counts[: data.n_left])
    fio.write_encounters(out / "right.csv", data.right.counts[: data.n_right])
    fio.write_json(
        out / "truth.json",
        {
            "N": truth.N,
            "lambda0": params.lambda0,
            "sigma": params.sigma,
            "K": truth.K,
            "M": M,
            "n_known": data.n_known,
            "n_left": data.n_left,
            "n_right": data.n_right,
            "seed": seed,
            "buffer": opts["buffer"],
            "s_true": truth.s_true,
            # answer_key[r] = true left row (1-based) of right row r (1-based)
            "answer_key": (key.perm + 1).tolist(),
            "version": __version__,
        },
    )


def _read_pair(opts):
    _require(opts, "traps", "left", "right", "K", "out")
    traps = fio.parse_traps(_existing(opts["traps"]))
    left = fio.parse_encounters(_existing(opts["left"]), traps.J, opts["K"])
    right = fio.parse_encounters(_existing(opts["right"]), traps.J, opts["K"])
    if opts["buffer"] is None or not opts["buffer"] > 0:
        raise CliError("config", "buffer must be > 0")
    return traps, left, right, StateSpace.around(traps, opts["buffer"])


def _meta(opts, chain, data: AugmentedDataset | None, swapped: bool, extra=None) -> dict:
    meta = {
        "command": opts["_command"],
        "version": __version__,
        "seed": chain.config["seed"],
        "sampler_config": chain.config,
        "options": {k: v for k, v in opts.items() if not k.startswith("_")},
        "acceptance": chain.acceptance,
        "N_definition": N_DEFINITIONS[chain.mode],
        "quantile_method": QUANTILE_METHOD,
        "n_samples": int(len(chain.samples)),
        "swapped": swapped,
    }
    if data is not None:
        meta.update(
            M=data.M, n_left=data.n_left, n_right=data.n_right, n_known=data.n_known, K=data.K,
            captured_left=(np.flatnonzero(data.left.captured) + 1).tolist(),
        )
    if extra:
        meta.update(extra)
    return meta


def cmd_fit(opts) -> None:
    traps, left, right, space = _read_pair(opts)
    n_known, mode = opts["n_known"], opts["mode"]
    if mode == "known_id" and n_known == 0:
        raise CliError("config", "known_id mode needs --n-known > 0")
    if mode == "full" and n_known > 0:
        mode = "known_id"
    if left.shape[0] < n_known or right.shape[0] < n_known:
        raise CliError("dimensions", "n_known exceeds the number of rows on one side")
    n_obs = max(left.shape[0], right.shape[0])
    M = opts.get("M") or _default_M(n_obs)
    if M < n_obs + 1:
        raise CliError("dimensions", f"M={M} must be at least observed rows + 1 ({n_obs + 1})")
    data, swapped = canonicalize(left, right, n_known, M)
    cfg = replace(_sampler_config(opts, mode), M=M)
    chain = run_chain(data, traps, space, cfg)
    out = Path(opts["out"])
    fio.write_chain(out / "chain.csv", chain)
    fio.write_encounters(out / "data_left.csv", data.left)
    fio.write_encounters(out / "data_right.csv", data.right)
    if chain.id_samples is not None:
        fio.write_id_samples(out / "id_samples.csv", chain)
    fio.write_json(out / "meta.json", _meta(opts, chain, data, swapped))


def cmd_fit_heuristic(opts) -> None:
    traps, left, right, space = _read_pair(opts)
    n_obs = max(left.shape[0], right.shape[0])
    M = opts.get("M") or _default_M(n_obs)
    if M < n_obs + 1:
        raise CliError("dimensions", f"M={M} must be at least observed rows + 1 ({n_obs + 1})")
    cfg = replace(_sampler_config(opts, "heuristic"), M=M)
    chain = run_heuristic(left.padded(M), right.padded(M), traps, space, cfg)
    out = Path(opts["out"])
    fio.write_chain(out / "chain.csv", chain)
    fio.write_json(out / "meta.json", _meta(opts, chain, None, False, {"M": M, "K": left.K}))


def cmd_summarize(opts) -> None:
    _require(opts, "chain", "out")
    samples = fio.read_chain(_existing(opts["chain"]))
    fio.write_summary(opts["out"], summarize(samples))


def cmd_id_table(opts) -> None:
    _require(opts, "run", "right_index", "out")
    run = Path(opts["run"])
    meta = _load_json(_existing(run / "meta.json"))
    ids = fio.read_id_samples(_existing(run / "id_samples.csv"))
    captured = np.zeros(meta["M"], dtype=bool)
    captured[np.asarray(meta["captured_left"], dtype=np.int64) - 1] = True
    right = opts["right_index"] - 1
    if right not in set(ids.id_rows.tolist()):
        raise CliError("dimensions", f"right row {opts['right_index']} is not a captured, tracked row")
    fio.write_id_table(opts["out"], id_match_table(ids, right, captured))


def _study_design(opts):
    if opts["full_grid"]:
        scenarios = study_grid_scenarios(opts["K"], opts["M_per_N"])
    else:
        scenarios = [
            Scenario(N, lam, sig, opts["K"], int(round(opts["M_per_N"] * N)))
            for N in opts["N_values"]
            for sig in opts["sigma_values"]
            for lam in opts["lambda0_values"]
        ]
    by_name = {e.name: e for e in STUDY_ESTIMATORS}
    names = opts["estimators"] or list(by_name)
    unknown = [n for n in names if n not in by_name]
    if unknown:
        raise CliError("config", f"unknown estimator(s): {', '.join(unknown)}")
    estimators = [by_name[n] for n in names]
    if not scenarios:
        raise CliError("config", "empty scenario grid")
    return scenarios, estimators


def cmd_simstudy(opts) -> None:
    _require(opts, "out")
    scenarios, estimators = _study_design(opts)
    cfg = _sampler_config(opts, "full")
    cfg.validate()

    def progress(done, total):
        print(f"{done}/{total} fits", file=sys.stderr, flush=True)

    metrics, results = run_study(scenarios, estimators, opts["R"], cfg, opts["master_seed"], opts["workers"], progress)
    out = Path(opts["out"])
    fio.write_metrics(out / "metrics.csv", metrics)
    rows = [
        [scenarios[r.scenario].label, estimators[r.estimator].name, r.replicate, r.N_true, r.mean, r.sd, r.mode,
         r.lower, r.upper, r.n_left, r.n_right, r.error or ""]
        for r in results
    ]
    header = ["scenario", "estimator", "replicate", "N_true", "mean", "sd", "mode", "lower", "upper", "n_left",
              "n_right", "error"]
    fio.atomic_write(out / "replicates.csv", fio._csv_text(header, [[fio._fmt(v) for v in r] for r in rows]))
    fio.write_json(
        out / "meta.json",
        {
            "command": "simstudy",
            "version": __version__,
            "options": {k: v for k, v in opts.items() if not k.startswith("_")},
            "sampler_config": cfg.to_dict(),
            "scenarios": [s.__dict__ for s in scenarios],
            "estimators": [e.__dict__ for e in estimators],
            "quantile_method": QUANTILE_METHOD,
            "N_definitions": N_DEFINITIONS,
            "new_label": NEW,
        },
    )


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "fit-heuristic": cmd_fit_heuristic,
    "summarize": cmd_summarize,
    "id-table": cmd_id_table,
    "simstudy": cmd_simstudy,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        opts = resolve_options(args)
        opts["_command"] = args.command
        COMMANDS[args.command](opts)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except fio.FormatError as exc:
        print(f"error: format: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
