import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flankscr.identity import (
    IdAssignment,
    SwapGeometry,
    canonicalize,
    centroid,
    centroids,
    greedy_init,
    reorder_right,
    swap_neighborhood,
)
from flankscr.model import AugmentedDataset, EncounterMatrix, TrapArray

from oracles import hungarian_free_min, swap_proposal_prob

# four-trap example geometry and its encounter data
TRAPS4 = TrapArray(np.array([[1.0, 2], [1, 1], [2, 2], [2, 1]]))
LEFT4 = np.array([[0, 1, 0, 0], [0, 0, 1, 0], [1, 1, 0, 0], [0, 0, 0, 1]])
RIGHT4 = np.array([[1, 0, 0, 0], [0, 0, 0, 1], [1, 0, 0, 0]])


def table1_dataset(M=6):
    data, swapped = canonicalize(EncounterMatrix(LEFT4, 1), EncounterMatrix(RIGHT4, 1), 0, M)
    assert not swapped
    return data


def test_id_assignment_invariants():
    IdAssignment(np.array([2, 0, 1]))
    with pytest.raises(ValueError):
        IdAssignment(np.array([0, 0, 1]))
    with pytest.raises(ValueError):
        IdAssignment(np.array([1, 0, 2]), n_known=1)
    a = IdAssignment(np.array([0, 2, 1, 3]), n_known=1)
    assert a.swapped(1, 3).perm.tolist() == [0, 3, 1, 2]
    np.testing.assert_array_equal(a.perm[a.inverse()], np.arange(4))


def test_centroid_examples():
    assert centroid([0, 0, 0, 1], TRAPS4) == centroid([0, 0, 0, 1], TRAPS4)
    assert centroid([0, 0, 0, 1], TRAPS4).location == (2.0, 1.0)
    assert centroid([0, 1, 0, 1], TRAPS4).location == (1.5, 1.0)
    c = centroid([0, 0, 0, 0], TRAPS4)
    assert c.location is None and c.n_caps == 0
    with pytest.raises(ValueError):
        centroid([1, 0], TRAPS4)


def test_centroids_weighted_and_nan():
    cs = centroids(np.array([[2, 0, 0, 1], [0, 0, 0, 0]]), TRAPS4)
    np.testing.assert_allclose(cs[0], [4 / 3, 5 / 3])
    assert np.isnan(cs[1]).all()


def test_canonicalize_keeps_larger_left():
    left = EncounterMatrix(np.eye(4, dtype=int)[[0, 1, 2]], 1)
    right = EncounterMatrix(np.eye(4, dtype=int)[[3]], 1)
    data, swapped = canonicalize(left, right, 0, 5)
    assert not swapped and (data.n_left, data.n_right, data.M) == (3, 1, 5)


def test_canonicalize_swaps_when_right_larger():
    rng = np.random.default_rng(0)
    left = EncounterMatrix(rng.integers(1, 3, size=(3, 4)), 2)
    right = EncounterMatrix(rng.integers(1, 3, size=(5, 4)), 2)
    data, swapped = canonicalize(left, right, 0, 8)
    assert swapped and (data.n_left, data.n_right) == (5, 3)
    np.testing.assert_array_equal(data.left.counts[:5], right.counts)


def test_canonicalize_tie_keeps_labels():
    left = EncounterMatrix(np.array([[1, 0]]), 1)
    right = EncounterMatrix(np.array([[0, 1]]), 1)
    data, swapped = canonicalize(left, right, 0, 2)
    assert not swapped
    assert data.left.counts[0].tolist() == [1, 0]


def test_canonicalize_orders_captured_before_zero_and_keeps_known_first():
    left = EncounterMatrix(np.array([[0, 0], [0, 0], [1, 0], [0, 1]]), 1)
    right = EncounterMatrix(np.array([[0, 0], [1, 1], [0, 0], [0, 0]]), 1)
    data, _ = canonicalize(left, right, n_known=1, M=5)
    assert data.left.counts.tolist() == [[0, 0], [1, 0], [0, 1], [0, 0], [0, 0]]
    assert (data.n_left, data.n_right, data.n_known) == (3, 2, 1)


def test_canonicalize_errors():
    with pytest.raises(ValueError):
        canonicalize(EncounterMatrix(np.zeros((2, 2), int), 1), EncounterMatrix(np.zeros((2, 3), int), 1))
    with pytest.raises(ValueError):
        canonicalize(EncounterMatrix(np.zeros((2, 2), int), 1), EncounterMatrix(np.zeros((2, 2), int), 2))
    with pytest.raises(ValueError):
        canonicalize(EncounterMatrix(np.ones((2, 2), int), 1), EncounterMatrix(np.ones((1, 2), int), 1), n_known=2)


@given(seed=st.integers(0, 2**32 - 1), nk=st.integers(0, 2))
def test_canonicalize_idempotent(seed, nk):
    rng = np.random.default_rng(seed)
    left = rng.integers(0, 2, size=(5, 3))
    right = rng.integers(0, 2, size=(4, 3))
    data, _ = canonicalize(EncounterMatrix(left, 1), EncounterMatrix(right, 1), nk, 7)
    again, swapped = canonicalize(data.left, data.right, nk, 7)
    assert not swapped
    np.testing.assert_array_equal(again.left.counts, data.left.counts)
    np.testing.assert_array_equal(again.right.counts, data.right.counts)


def test_reorder_right_examples():
    right = np.array([[1, 0], [0, 1], [1, 1]])
    np.testing.assert_array_equal(reorder_right(right, IdAssignment.identity(3)), right)
    out = reorder_right(right, IdAssignment(np.array([1, 0, 2])))
    np.testing.assert_array_equal(out, right[[1, 0, 2]])
    with pytest.raises(ValueError):
        reorder_right(right, IdAssignment.identity(4))


def test_reorder_right_four_trap_pairing():
    data = table1_dataset()
    rs = reorder_right(data.right, IdAssignment.identity(data.M))
    pairs = list(zip(data.left.counts[0], rs[0]))
    assert pairs == [(0, 1), (1, 0), (0, 0), (0, 0)]


@given(seed=st.integers(0, 2**32 - 1))
def test_reorder_inverse_round_trip(seed):
    rng = np.random.default_rng(seed)
    M = int(rng.integers(1, 9))
    right = rng.integers(0, 3, size=(M, 2))
    a = IdAssignment(rng.permutation(M))
    back = reorder_right(reorder_right(right, a), IdAssignment(a.inverse()))
    np.testing.assert_array_equal(back, right)


def test_greedy_four_trap_example():
    data = table1_dataset()
    g = greedy_init(data, TRAPS4)
    # the trap-4-only right row goes to the trap-4-only left row
    assert g.perm[1] == 3


def test_greedy_all_zero_right_is_identity():
    left = EncounterMatrix(np.array([[1, 0], [0, 1], [0, 0]]), 1)
    right = EncounterMatrix(np.zeros((3, 2), int), 1)
    data = AugmentedDataset(left, right, 2, 0)
    traps = TrapArray(np.array([[0.0, 0], [1, 0]]))
    assert greedy_init(data, traps).perm.tolist() == [0, 1, 2]


def test_greedy_diagonal_two_by_two():
    # centroids 0.1 apart on the diagonal, 5.0 apart off it
    traps = TrapArray(np.array([[0.0, 0], [5, 0], [0.1, 0], [5.1, 0]]))
    left = EncounterMatrix(np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0]]), 1)
    right = EncounterMatrix(np.array([[0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 0, 0]]), 1)
    data = AugmentedDataset(left, right, 2, 2)
    g = greedy_init(data, traps)
    assert g.perm[:2].tolist() == [0, 1]
    cost = np.array([[0.1, 4.9], [5.1, 0.1]])
    assert hungarian_free_min(cost) == pytest.approx(0.2)


def _captured_distance(data, traps, perm):
    cr = centroids(data.right.counts, traps)
    cl = centroids(data.left.counts, traps)
    tot = 0.0
    for r in range(data.n_known, data.n_right):
        l = perm[r]
        if data.left.captured[l]:
            tot += math.dist(cr[r], cl[l])
    return tot


@given(seed=st.integers(0, 2**32 - 1))
def test_greedy_bounded_by_exhaustive_and_follows_rule(seed):
    rng = np.random.default_rng(seed)
    traps = TrapArray(np.array([[x, y] for x in range(3) for y in range(3)], dtype=float))
    nl, nr = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    nl, nr = max(nl, nr), min(nl, nr)
    left = np.zeros((nl, 9), int)
    right = np.zeros((nr, 9), int)
    for row in left:
        row[rng.choice(9, size=rng.integers(1, 3), replace=False)] = 1
    for row in right:
        row[rng.choice(9, size=rng.integers(1, 3), replace=False)] = 1
    data, _ = canonicalize(EncounterMatrix(left, 1), EncounterMatrix(right, 1), 0, nl + 1)
    g = greedy_init(data, traps)
    cr = centroids(data.right.counts[: data.n_right], traps)
    cl = centroids(data.left.counts[: data.n_left], traps)
    cost = np.sqrt(((cr[:, None] - cl[None]) ** 2).sum(-1))
    got = _captured_distance(data, traps, g.perm)
    assert got >= hungarian_free_min(cost) - 1e-9
    # matches a direct restatement of the rule: repeatedly take the closest free pair,
    # ties to the lowest (right, left) index
    free_r, free_l, pairs = set(range(len(cr))), set(range(len(cl))), {}
    while free_r and free_l:
        _, a, b = min((cost[a, b], a, b) for a in free_r for b in free_l)
        pairs[a] = b
        free_r.discard(a)
        free_l.discard(b)
    assert all(g.perm[a] == b for a, b in pairs.items())


def test_greedy_can_exceed_identity_distance():
    # the closest pair (right 0, left 1) is taken first and forces a long second match
    traps = TrapArray(np.array([[x, y] for x in range(3) for y in range(3)], dtype=float))
    left = np.zeros((2, 9), int)
    right = np.zeros((2, 9), int)
    left[0, 0] = left[1, 1] = 1
    right[0, 4] = right[1, 2] = 1
    data, swapped = canonicalize(EncounterMatrix(left, 1), EncounterMatrix(right, 1), 0, 3)
    assert not swapped
    g = greedy_init(data, traps)
    assert g.perm[:2].tolist() == [1, 0]
    assert _captured_distance(data, traps, g.perm) == pytest.approx(3.0)
    assert _captured_distance(data, traps, np.arange(3)) == pytest.approx(1 + math.sqrt(2))


def test_swap_neighborhood_radius_infinite_is_everything():
    data = table1_dataset()
    idn = greedy_init(data, TRAPS4)
    assert swap_neighborhood(0, idn, data, TRAPS4, math.inf) == set(range(1, data.M))


def test_swap_neighborhood_distance_filter():
    traps = TrapArray(np.array([[2.0, 1], [1, 2]]))
    left = EncounterMatrix(np.array([[0, 1], [0, 0], [0, 0]]), 1)
    right = EncounterMatrix(np.array([[1, 0], [0, 0], [0, 0]]), 1)
    data = AugmentedDataset(left, right, 1, 1)
    a = IdAssignment(np.array([1, 0, 2]))
    nb = swap_neighborhood(0, a, data, traps, 0.5)
    assert 1 not in nb  # sits on the (1,2) left row, sqrt(2) away
    assert nb == {2}  # free slot
    with pytest.raises(ValueError):
        swap_neighborhood(0, IdAssignment(np.arange(3), 1), AugmentedDataset(left, right, 1, 1, 1), traps, 1.0)


def test_swap_neighborhood_three_partners_two_in_range():
    traps = TrapArray(np.array([[0.0, 0], [1, 0], [2, 0], [9, 0]]))
    left = EncounterMatrix(np.array([[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [1, 0, 0, 0]]), 1)
    right = EncounterMatrix(np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]), 1)
    data = AugmentedDataset(left, right, 4, 4)
    a = IdAssignment(np.array([3, 0, 1, 2]))
    # brute-force distance filter from right row 0 at x=0
    cl = centroids(left.counts, traps)
    expected = {r for r in (1, 2, 3) if math.dist(cl[a.perm[r]], (0, 0)) <= 2.0}
    got = swap_neighborhood(0, a, data, traps, 2.0)
    assert got == expected and len(got) == 2


def _random_geometry_case(seed):
    rng = np.random.default_rng(seed)
    J = 6
    traps = TrapArray(np.column_stack([np.arange(J, dtype=float), rng.uniform(0, 2, J)]))
    M = int(rng.integers(3, 8))
    nk = int(rng.integers(0, 2))
    nl = int(rng.integers(nk + 1, M))
    nr = int(rng.integers(nk, nl + 1))
    left = np.zeros((M, J), int)
    right = np.zeros((M, J), int)
    for i in range(nl):
        left[i, rng.integers(J)] = 1
    for i in range(nr):
        right[i, rng.integers(J)] = 1
    data = AugmentedDataset(EncounterMatrix(left, 1), EncounterMatrix(right, 1), nl, nr, nk)
    perm = np.concatenate([np.arange(nk), nk + rng.permutation(M - nk)])
    return data, traps, IdAssignment(perm, nk), float(rng.uniform(0.5, 4))


@given(seed=st.integers(0, 2**32 - 1))
def test_geometry_sizes_match_reference_neighbourhood(seed):
    data, traps, a, radius = _random_geometry_case(seed)
    geom = SwapGeometry(data, traps, radius)
    free = geom.free_mask(a.perm)
    for r in geom.proposable:
        ref = swap_neighborhood(int(r), a, data, traps, radius)
        assert geom.size(int(r), a.perm, int(free.sum())) == len(ref)


@given(seed=st.integers(0, 2**32 - 1))
def test_hastings_ratio_matches_enumerated_proposal(seed):
    data, traps, a, radius = _random_geometry_case(seed)
    geom = SwapGeometry(data, traps, radius)
    pool = [int(r) for r in geom.proposable]
    if not pool:
        return

    def nb(r, perm):
        return swap_neighborhood(r, IdAssignment(perm, data.n_known), data, traps, radius)

    fwd = swap_proposal_prob(a.perm, pool, nb)
    free = geom.free_mask(a.perm)
    for pair, q_fwd in fwd.items():
        # orient the pair as the kernel sees it: r picked first, r2 drawn from C(r)
        r, r2 = sorted(pair)
        if r not in pool or r2 not in nb(r, a.perm):
            r, r2 = r2, r
        after = a.swapped(r, r2).perm
        rev = swap_proposal_prob(after, pool, nb).get(pair, 0.0)
        got = geom.log_hastings(r, r2, a.perm, free, int(free.sum()))
        if rev == 0.0:
            assert got == -math.inf
        else:
            assert got == pytest.approx(math.log(rev / q_fwd), abs=1e-12)
        if data.right.captured[r2]:
            continue
        # single-path case: the ratio is |C_fwd| / |C_rev|
        c_fwd = len(nb(r, a.perm))
        c_rev = len(nb(r, after))
        if r2 in nb(r, a.perm) and r2 in nb(r, after):
            assert got == pytest.approx(math.log(c_fwd / c_rev), abs=1e-12)
