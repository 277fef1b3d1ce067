import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from flankscr import io as fio
from flankscr.analysis import NEW, IdMatchTable, StudyMetrics, summarize
from flankscr.model import EncounterMatrix, TrapArray
from flankscr.sampler import SAMPLE_DTYPE, ChainOutput

FUNC = dict(suppress_health_check=[HealthCheck.function_scoped_fixture])


def write(path, text):
    path.write_text(text)
    return path


def test_parse_four_trap_layout(tmp_path):
    p = write(tmp_path / "t.csv", "trap_id,x,y\n1,1,2\n2,1,1\n3,2,2\n4,2,1\n")
    t = fio.parse_traps(p)
    np.testing.assert_array_equal(t.coords, [[1, 2], [1, 1], [2, 2], [2, 1]])


def test_parse_traps_sorts_by_id(tmp_path):
    p = write(tmp_path / "t.csv", "trap_id,x,y\n2,5,6\n1,3,4\n")
    np.testing.assert_array_equal(fio.parse_traps(p).coords, [[3, 4], [5, 6]])


@pytest.mark.parametrize(
    "text, message",
    [
        ("", "no traps"),
        ("trap_id,x,y\n", "no traps"),
        ("trap_id,x,y\n1,0,0\n3,1,1\n", "gap in trap ids"),
        ("trap_id,x,y\n1,0,0\n1,1,1\n", "duplicate trap ids"),
        ("id,x,y\n1,0,0\n", "header"),
        ("trap_id,x,y\n1,a,0\n", "non-numeric"),
    ],
)
def test_parse_traps_errors(tmp_path, text, message):
    p = write(tmp_path / "t.csv", text)
    with pytest.raises(fio.FormatError, match=message):
        fio.parse_traps(p)


def test_parse_encounters_left_block(tmp_path):
    p = write(tmp_path / "l.csv", "t1,t2,t3,t4\n0,1,0,0\n0,0,1,0\n1,1,0,0\n0,0,0,1\n")
    m = fio.parse_encounters(p, 4, 1)
    assert m.shape == (4, 4)
    assert m.counts[2].tolist() == [1, 1, 0, 0]


def test_parse_encounters_count_above_K_names_cell(tmp_path):
    p = write(tmp_path / "l.csv", "t1,t2\n0,1\n0,3\n")
    with pytest.raises(fio.FormatError, match=r"row 2, column t2: count 3 exceeds K=2"):
        fio.parse_encounters(p, 2, 2)


@pytest.mark.parametrize(
    "text, message",
    [
        ("t1,t2\n0,-1\n", "negative count"),
        ("t1,t2\n0,1,0\n", "row 1: expected 2 columns"),
        ("t1,t3\n0,1\n", "header"),
        ("t1,t2\n0,x\n", "not an integer"),
    ],
)
def test_parse_encounters_errors(tmp_path, text, message):
    p = write(tmp_path / "l.csv", text)
    with pytest.raises(fio.FormatError, match=message):
        fio.parse_encounters(p, 2, 2)


def test_parse_encounters_header_only_is_empty(tmp_path):
    p = write(tmp_path / "l.csv", "t1,t2\n")
    assert fio.parse_encounters(p, 2, 2).shape == (0, 2)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    fio.atomic_write(tmp_path / "sub" / "a.txt", "x\n")
    fio.atomic_write(tmp_path / "sub" / "a.txt", "y\n")
    assert (tmp_path / "sub" / "a.txt").read_text() == "y\n"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.txt"]


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=20, unique=True))
@settings(**FUNC)
def test_traps_round_trip(tmp_path, coords):
    t = TrapArray(np.array(coords, dtype=float))
    fio.write_traps(tmp_path / "t.csv", t)
    np.testing.assert_array_equal(fio.parse_traps(tmp_path / "t.csv").coords, t.coords)


@given(st.integers(1, 5), st.integers(1, 6), st.data())
@settings(**FUNC)
def test_encounters_round_trip(tmp_path, K, J, data):
    n = data.draw(st.integers(0, 8))
    counts = np.array(data.draw(st.lists(st.lists(st.integers(0, K), min_size=J, max_size=J), min_size=n,
                                         max_size=n)), dtype=np.int64).reshape(n, J)
    fio.write_encounters(tmp_path / "e.csv", EncounterMatrix(counts, K))
    np.testing.assert_array_equal(fio.parse_encounters(tmp_path / "e.csv", J, K).counts, counts)


positive = st.floats(1e-300, 1e300, allow_nan=False, allow_infinity=False)


@given(st.lists(st.tuples(positive, positive, st.floats(0, 1), st.integers(0, 10**6),
                          st.floats(-1e300, 0, allow_nan=False)), min_size=1, max_size=15))
@settings(**FUNC)
def test_chain_round_trip_is_exact(tmp_path, recs):
    s = np.zeros(len(recs), dtype=SAMPLE_DTYPE)
    s["iter"] = np.arange(1, len(recs) + 1) * 3
    for k, (lam, sig, psi, N, ll) in enumerate(recs):
        s[k] = (s["iter"][k], lam, sig, psi, N, ll)
    fio.write_chain(tmp_path / "c.csv", ChainOutput(s))
    back = fio.read_chain(tmp_path / "c.csv")
    assert back.tobytes() == s.tobytes()


@given(st.integers(1, 6), st.integers(1, 4), st.data())
@settings(**FUNC)
def test_id_samples_round_trip(tmp_path, n_iter, n_rows, data):
    rows = np.array(sorted(data.draw(st.sets(st.integers(0, 20), min_size=n_rows, max_size=n_rows))))
    table = np.array([[data.draw(st.integers(0, 30)) for _ in rows] for _ in range(n_iter)], dtype=np.int64)
    iters = np.arange(1, n_iter + 1) * 5
    chain = ChainOutput(np.zeros(n_iter, dtype=SAMPLE_DTYPE), table, rows, iters)
    fio.write_id_samples(tmp_path / "i.csv", chain)
    back = fio.read_id_samples(tmp_path / "i.csv")
    np.testing.assert_array_equal(back.id_samples, table)
    np.testing.assert_array_equal(back.id_rows, rows)
    np.testing.assert_array_equal(back.id_iters, iters)


def test_id_samples_file_is_one_based(tmp_path):
    chain = ChainOutput(np.zeros(1, dtype=SAMPLE_DTYPE), np.array([[0]]), np.array([2]), np.array([7]))
    fio.write_id_samples(tmp_path / "i.csv", chain)
    assert (tmp_path / "i.csv").read_text() == "iter,right_index,left_index\n7,3,1\n"


@given(st.lists(st.integers(0, 200), min_size=2, max_size=30),
       st.lists(st.floats(1e-6, 1e6), min_size=2, max_size=30))
@settings(**FUNC)
def test_summary_round_trip(tmp_path, Ns, lams):
    n = min(len(Ns), len(lams))
    s = np.zeros(n, dtype=SAMPLE_DTYPE)
    s["iter"], s["N"], s["lambda0"], s["sigma"], s["psi"] = np.arange(n), Ns[:n], lams[:n], 0.5, 0.3
    summary = summarize(s)
    fio.write_summary(tmp_path / "s.csv", summary)
    back = fio.read_summary(tmp_path / "s.csv")
    for name, ps in summary.params.items():
        assert back[name]["mean"] == ps.mean and back[name]["sd"] == ps.sd
        assert back[name]["quantiles"] == ps.quantiles and back[name]["mode"] == ps.mode


@given(st.lists(st.tuples(st.one_of(st.just(NEW), st.integers(0, 50)), st.integers(1, 1000)), max_size=10))
@settings(**FUNC)
def test_id_table_round_trip(tmp_path, rows):
    t = IdMatchTable(0, rows, sum(c for _, c in rows))
    fio.write_id_table(tmp_path / "t.csv", t)
    assert fio.read_id_table(tmp_path / "t.csv") == rows


@given(st.lists(st.builds(StudyMetrics, st.text("abcN=0,;\" ", min_size=1), st.sampled_from(["nID=0", "heur"]),
                          st.integers(0, 100), finite, finite, finite, finite, finite, st.floats(0, 1),
                          st.integers(0, 500)), max_size=6))
@settings(**FUNC)
def test_metrics_round_trip(tmp_path, metrics):
    fio.write_metrics(tmp_path / "m.csv", metrics)
    assert fio.read_metrics(tmp_path / "m.csv") == metrics


def test_json_handles_numpy(tmp_path):
    fio.write_json(tmp_path / "a.json", {"a": np.arange(3), "b": np.int64(4), "c": np.float64(0.5)})
    assert fio.read_json(tmp_path / "a.json") == {"a": [0, 1, 2], "b": 4, "c": 0.5}
    with pytest.raises(TypeError):
        fio.write_json(tmp_path / "b.json", {"x": object()})
