"""Clustering metrics against hand values and independent oracles."""

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cactus_kit.cluster import Clustering
from cactus_kit.metrics import (
    ContingencyTable,
    adjusted_rand_index,
    all_metrics,
    ami,
    contingency,
    expected_mi,
    f1,
    nmi,
    rand_index,
)

from conftest import (
    oracle_adjusted_rand_index,
    oracle_ami,
    oracle_expected_mi,
    oracle_f1,
    oracle_nmi,
    oracle_rand_index,
    set_partitions,
)

CROSS = ContingencyTable(np.array([[1, 1], [1, 1]]))


def table_from_labels(a, b) -> ContingencyTable:
    return contingency(Clustering("s", tuple(a)), Clustering("s", tuple(b)))


# ---------------------------------------------------------------------------
# contingency


def test_contingency_identical():
    t = table_from_labels([0, 0, 1, 1], [0, 0, 1, 1])
    assert t.counts.tolist() == [[2, 0], [0, 2]]
    assert t.row_marginals.tolist() == [2, 2]
    assert t.col_marginals.tolist() == [2, 2]
    assert t.n == 4


def test_contingency_crossed():
    # A = {{1,2},{3,4}}, B = {{1,3},{2,4}}
    t = table_from_labels([0, 0, 1, 1], [0, 1, 0, 1])
    assert t.counts.tolist() == [[1, 1], [1, 1]]


def test_contingency_single_cluster_vs_singletons():
    t = table_from_labels([0, 0, 0], [0, 1, 2])
    assert t.counts.tolist() == [[1, 1, 1]]


def test_contingency_mismatched_sets_error():
    with pytest.raises(ValueError):
        contingency(Clustering("s", (0, 1)), Clustering("s", (0, 1, 2)))
    with pytest.raises(ValueError):
        contingency(Clustering("s1", (0, 1)), Clustering("s2", (0, 1)))


# ---------------------------------------------------------------------------
# hand values


def test_nmi_identical_is_one():
    t = table_from_labels([0, 0, 1, 1], [1, 1, 0, 0])
    assert nmi(t) == pytest.approx(1.0, abs=1e-12)


def test_nmi_crossed_is_zero():
    assert nmi(CROSS) == pytest.approx(0.0, abs=1e-12)


def test_nmi_both_single_cluster_convention():
    assert nmi(table_from_labels([0, 0], [0, 0])) == 1.0


def test_expected_mi_single_cell():
    assert expected_mi(ContingencyTable(np.array([[5]]))) == 0.0


def test_expected_mi_two_singletons_exact():
    # a = b = (1, 1), n = 2: both feasible tables are permutation matrices
    # with MI = ln 2, so E[MI] = ln 2 exactly.
    t = table_from_labels([0, 1], [0, 1])
    assert expected_mi(t) == pytest.approx(math.log(2.0), abs=1e-12)


def test_expected_mi_nonnegative_random_tables():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        a = rng.integers(0, 3, n)
        b = rng.integers(0, 3, n)
        t = table_from_labels(a.tolist(), b.tolist())
        assert expected_mi(t) >= -1e-12


def test_ami_identical_is_one():
    t = table_from_labels([0, 1, 1, 2], [2, 0, 0, 1])
    assert ami(t) == pytest.approx(1.0, abs=1e-12)


def test_ami_crossed_is_negative():
    assert expected_mi(CROSS) > 0.0
    assert ami(CROSS) < 0.0


def test_rand_index_hand_values():
    t = table_from_labels([0, 0, 1, 1], [0, 0, 1, 1])
    assert rand_index(t) == 1.0
    assert rand_index(CROSS) == pytest.approx(1 / 3, abs=1e-12)


def test_ari_hand_values():
    t = table_from_labels([0, 1, 0, 1], [1, 0, 1, 0])
    assert adjusted_rand_index(t) == 1.0
    assert adjusted_rand_index(CROSS) == pytest.approx(-0.5, abs=1e-12)


def test_f1_hand_values():
    t = table_from_labels([0, 0, 1], [1, 1, 0])
    assert f1(t) == 1.0
    assert f1(CROSS) == pytest.approx(0.5, abs=1e-12)
    # truth {2,2}, prediction one cluster: precision 0.5, recall 1
    t = table_from_labels([0, 0, 1, 1], [0, 0, 0, 0])
    assert f1(t) == pytest.approx(2 / 3, abs=1e-12)


def test_metrics_require_two_entities():
    one = ContingencyTable(np.array([[1]]))
    with pytest.raises(ValueError):
        rand_index(one)
    with pytest.raises(ValueError):
        adjusted_rand_index(one)


# ---------------------------------------------------------------------------
# oracle agreement


def test_nmi_matches_brute_force_on_random_labelings():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        a = rng.integers(0, 4, n).tolist()
        b = rng.integers(0, 4, n).tolist()
        t = table_from_labels(a, b)
        assert nmi(t) == pytest.approx(oracle_nmi(a, b), abs=1e-12)


def test_expected_mi_matches_permutation_average_small_n():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        a = rng.integers(0, 3, n).tolist()
        b = rng.integers(0, 3, n).tolist()
        t = table_from_labels(a, b)
        assert expected_mi(t) == pytest.approx(oracle_expected_mi(a, b), abs=1e-10)


def test_ami_matches_sklearn_reference_on_random_tables():
    sklearn_metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(3, 12))
        a = rng.integers(0, 4, n).tolist()
        b = rng.integers(0, 4, n).tolist()
        t = table_from_labels(a, b)
        expected = sklearn_metrics.adjusted_mutual_info_score(a, b, average_method="arithmetic")
        assert ami(t) == pytest.approx(expected, abs=1e-9)


def test_all_metrics_match_oracles_for_all_partition_pairs_n4():
    # the full n<=6 sweep runs in the acceptance module
    for a in set_partitions(4):
        for b in set_partitions(4):
            t = table_from_labels(a, b)
            assert nmi(t) == pytest.approx(oracle_nmi(a, b), abs=1e-9)
            assert ami(t) == pytest.approx(oracle_ami(a, b), abs=1e-9)
            assert rand_index(t) == pytest.approx(oracle_rand_index(a, b), abs=1e-9)
            assert adjusted_rand_index(t) == pytest.approx(oracle_adjusted_rand_index(a, b), abs=1e-9)
            assert f1(t) == pytest.approx(oracle_f1(a, b), abs=1e-9)


def test_expected_mi_matches_monte_carlo_permutations():
    rng = np.random.default_rng(4)
    a = rng.integers(0, 3, 8).tolist()
    b = rng.integers(0, 3, 8).tolist()
    t = table_from_labels(a, b)
    exact = expected_mi(t)
    samples = 20000
    seen = Counter()
    arr = np.array(b)
    for _ in range(samples):
        seen[tuple(rng.permutation(arr).tolist())] += 1
    from conftest import oracle_mi

    values = np.array([oracle_mi(a, list(perm)) for perm in seen])
    weights = np.array([c for c in seen.values()], dtype=float)
    mc_mean = float(np.average(values, weights=weights))
    mc_var = float(np.average((values - mc_mean) ** 2, weights=weights))
    sigma = math.sqrt(mc_var / samples)
    assert abs(mc_mean - exact) <= 3.0 * sigma + 1e-9


# ---------------------------------------------------------------------------
# invariance properties


@st.composite
def labeling_pairs(draw):
    n = draw(st.integers(2, 8))
    a = [draw(st.integers(0, 3)) for _ in range(n)]
    b = [draw(st.integers(0, 3)) for _ in range(n)]
    return a, b


@settings(max_examples=60, deadline=None)
@given(labeling_pairs(), st.integers(0, 2 ** 30))
def test_metrics_invariant_under_relabeling_and_reordering(pair, seed):
    a, b = pair
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(a))
    relabel_a = rng.permutation(8).tolist()
    relabel_b = rng.permutation(8).tolist()
    a2 = [relabel_a[a[i]] for i in order]
    b2 = [relabel_b[b[i]] for i in order]
    before = all_metrics(Clustering("s", tuple(a)), Clustering("s", tuple(b)))
    after = all_metrics(Clustering("s", tuple(a2)), Clustering("s", tuple(b2)))
    for key in before:
        assert before[key] == pytest.approx(after[key], abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(labeling_pairs())
def test_symmetry_and_f1_transposition(pair):
    a, b = pair
    t = table_from_labels(a, b)
    t_swapped = table_from_labels(b, a)
    assert nmi(t) == pytest.approx(nmi(t_swapped), abs=1e-12)
    assert ami(t) == pytest.approx(ami(t_swapped), abs=1e-12)
    assert rand_index(t) == pytest.approx(rand_index(t_swapped), abs=1e-12)
    assert adjusted_rand_index(t) == pytest.approx(adjusted_rand_index(t_swapped), abs=1e-12)
    # F1 swaps precision and recall under transposition
    assert f1(t) == pytest.approx(f1(t.transposed()), abs=1e-12)
    assert f1(t_swapped) == pytest.approx(f1(ContingencyTable(t.counts.T)), abs=1e-12)


def test_identical_clusterings_score_exactly_one():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        labels = tuple(int(x) for x in rng.integers(0, 3, n))
        c = Clustering("s", labels)
        scores = all_metrics(c, c)
        assert scores["nmi"] == 1.0
        assert scores["ri"] == 1.0
        assert scores["f1"] == 1.0
        if c.num_clusters not in (1, n):  # non-degenerate
            assert scores["ami"] == pytest.approx(1.0, abs=1e-12)
            assert scores["ari"] == pytest.approx(1.0, abs=1e-12)
