"""CSV/JSON file formats. Every index written to disk is 1-based."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .analysis import IdMatchTable, PosteriorSummary, StudyMetrics
from .model import EncounterMatrix, TrapArray
from .sampler import SAMPLE_DTYPE, ChainOutput

CHAIN_COLUMNS = ("iter", "lambda0", "sigma", "psi", "N", "loglik")
SUMMARY_COLUMNS = ("parameter", "mean", "sd", "2.5%", "25%", "50%", "75%", "97.5%", "mode")


class FormatError(ValueError):
    pass


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        return [], []
    return [c.strip() for c in rows[0]], rows[1:]


# -- traps -------------------------------------------------------------------


def parse_traps(path) -> TrapArray:
    header, rows = _read_rows(path)
    if not rows:
        raise FormatError("no traps")
    if header != ["trap_id", "x", "y"]:
        raise FormatError(f"trap file header must be trap_id,x,y, got {','.join(header)}")
    ids, coords = [], []
    for n, r in enumerate(rows, start=2):
        if len(r) != 3:
            raise FormatError(f"line {n}: expected 3 columns")
        try:
            ids.append(int(r[0]))
            coords.append((float(r[1]), float(r[2])))
        except ValueError:
            raise FormatError(f"line {n}: non-numeric trap entry") from None
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate trap ids")
    order = np.argsort(ids)
    if sorted(ids) != list(range(1, len(ids) + 1)):
        raise FormatError("gap in trap ids")
    return TrapArray(np.array(coords)[order])


def write_traps(path, traps: TrapArray) -> None:
    rows = [[j + 1, _fmt(x), _fmt(y)] for j, (x, y) in enumerate(traps.coords)]
    atomic_write(path, _csv_text(["trap_id", "x", "y"], rows))


# -- encounter matrices ------------------------------------------------------


def parse_encounters(path, J: int, K: int) -> EncounterMatrix:
    header, rows = _read_rows(path)
    expected = [f"t{j}" for j in range(1, J + 1)]
    if header != expected:
        raise FormatError(f"encounter header must be t1..t{J}")
    out = np.zeros((len(rows), J), dtype=np.int64)
    for i, r in enumerate(rows, start=1):
        if len(r) != J:
            raise FormatError(f"row {i}: expected {J} columns, got {len(r)}")
        for j, cell in enumerate(r, start=1):
            try:
                v = int(cell)
            except ValueError:
                raise FormatError(f"row {i}, column t{j}: not an integer") from None
            if v < 0:
                raise FormatError(f"row {i}, column t{j}: negative count {v}")
            if v > K:
                raise FormatError(f"row {i}, column t{j}: count {v} exceeds K={K}")
            out[i - 1, j - 1] = v
    return EncounterMatrix(out.reshape(len(rows), J), K)


def write_encounters(path, mat: EncounterMatrix | np.ndarray) -> None:
    counts = mat.counts if isinstance(mat, EncounterMatrix) else np.asarray(mat)
    header = [f"t{j}" for j in range(1, counts.shape[1] + 1)]
    atomic_write(path, _csv_text(header, counts.tolist()))


# -- chains ------------------------------------------------------------------


def write_chain(path, chain: ChainOutput) -> None:
    rows = [[_fmt(v) for v in rec] for rec in chain.samples.tolist()]
    atomic_write(path, _csv_text(CHAIN_COLUMNS, rows))


def read_chain(path) -> np.ndarray:
    header, rows = _read_rows(path)
    if header != list(CHAIN_COLUMNS):
        raise FormatError(f"chain header must be {','.join(CHAIN_COLUMNS)}")
    out = np.zeros(len(rows), dtype=SAMPLE_DTYPE)
    for k, r in enumerate(rows):
        out[k] = (int(r[0]), float(r[1]), float(r[2]), float(r[3]), int(r[4]), float(r[5]))
    return out


def write_id_samples(path, chain: ChainOutput) -> None:
    long = chain.id_long()
    rows = [[it, r + 1, l + 1] for it, r, l in long.tolist()]
    atomic_write(path, _csv_text(["iter", "right_index", "left_index"], rows))


def read_id_samples(path) -> ChainOutput:
    """Rebuild the ID part of a chain (samples field left empty)."""
    header, rows = _read_rows(path)
    if header != ["iter", "right_index", "left_index"]:
        raise FormatError("id sample header must be iter,right_index,left_index")
    arr = np.array([[int(c) for c in r] for r in rows], dtype=np.int64).reshape(-1, 3)
    iters = np.unique(arr[:, 0])
    right = np.unique(arr[:, 1]) - 1
    table = np.zeros((len(iters), len(right)), dtype=np.int64)
    it_pos = {v: k for k, v in enumerate(iters.tolist())}
    r_pos = {v: k for k, v in enumerate(right.tolist())}
    for it, r, l in arr.tolist():
        table[it_pos[it], r_pos[r - 1]] = l - 1
    return ChainOutput(np.zeros(0, dtype=SAMPLE_DTYPE), table, right, iters)


# -- summaries and study tables ------------------------------------------------


def write_summary(path, summary: PosteriorSummary) -> None:
    rows = [[r[0], *[_fmt(v) for v in r[1:]]] for r in summary.rows()]
    atomic_write(path, _csv_text(SUMMARY_COLUMNS, rows))


def read_summary(path) -> dict:
    header, rows = _read_rows(path)
    if header != list(SUMMARY_COLUMNS):
        raise FormatError("unexpected summary header")
    out = {}
    for r in rows:
        vals = [float(v) for v in r[1:8]]
        out[r[0]] = {"mean": vals[0], "sd": vals[1], "quantiles": tuple(vals[2:]),
                     "mode": int(r[8]) if r[8] != "" else None}
    return out


def write_id_table(path, table: IdMatchTable) -> None:
    rows = [[l if l == "NEW" else l + 1, c] for l, c in table.rows]
    atomic_write(path, _csv_text(["left_index", "count"], rows))


def read_id_table(path) -> list:
    header, rows = _read_rows(path)
    if header != ["left_index", "count"]:
        raise FormatError("unexpected id table header")
    return [(r[0] if r[0] == "NEW" else int(r[0]) - 1, int(r[1])) for r in rows]


def write_metrics(path, metrics: list[StudyMetrics]) -> None:
    rows = [[_fmt(v) for v in m.row()] for m in metrics]
    atomic_write(path, _csv_text(StudyMetrics.COLUMNS, rows))


def read_metrics(path) -> list[StudyMetrics]:
    header, rows = _read_rows(path)
    if header != list(StudyMetrics.COLUMNS):
        raise FormatError("unexpected metrics header")
    return [
        StudyMetrics(r[0], r[1], int(r[2]), float(r[3]), float(r[4]), float(r[5]), float(r[6]), float(r[7]),
                     float(r[8]), int(r[9]))
        for r in rows
    ]


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
