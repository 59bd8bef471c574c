import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from netgee.graph import (
    DirectedGraph,
    NoBetweenPairsError,
    NoWithinPairsError,
    Partition,
    SbmConfig,
    block_submatrix,
    edge_counts,
    estimate_edge_probs,
    planted_partition,
    read_adjacency_csv,
    read_edge_list_csv,
    sample_sbm,
    write_adjacency_csv,
    write_edge_list_csv,
)


def binary_graphs(max_n=9):
    return st.integers(1, max_n).flatmap(
        lambda n: arrays(np.int8, (n, n), elements=st.integers(0, 1)).map(
            lambda a: DirectedGraph(a * (1 - np.eye(n, dtype=np.int8)))
        )
    )


def labelings(n, max_k=4):
    return st.lists(st.integers(1, max_k), min_size=n, max_size=n).map(Partition.from_labels)


class TestDirectedGraph:
    def test_rejects_bad_input(self):
        with pytest.raises(ValueError, match="square"):
            DirectedGraph(np.zeros((2, 3)))
        with pytest.raises(ValueError, match="diagonal"):
            DirectedGraph(np.eye(2))
        with pytest.raises(ValueError, match="non-negative"):
            DirectedGraph(np.array([[0, -1.0], [0, 0]]))
        with pytest.raises(ValueError, match="non-finite"):
            DirectedGraph(np.array([[0, np.nan], [0, 0]]))

    def test_binary_flag_inferred(self):
        assert DirectedGraph(np.array([[0, 1], [0, 0]])).is_binary
        assert not DirectedGraph(np.array([[0, 2.5], [0, 0]])).is_binary
        with pytest.raises(ValueError):
            DirectedGraph(np.array([[0, 2.5], [0, 0]]), is_binary=True)

    def test_weights_are_read_only(self):
        g = DirectedGraph(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            g.weights[0, 1] = 1.0


class TestPartition:
    def test_relabel_by_first_appearance(self):
        p = Partition.from_labels(["b", "a", "b", "c"])
        assert p.labels.tolist() == [1, 2, 1, 3]
        assert p.K == 3
        assert p.sizes.tolist() == [2, 1, 1]
        assert p.members(1).tolist() == [0, 2]

    def test_invalid_labels(self):
        with pytest.raises(ValueError):
            Partition(np.array([1, 3]))
        with pytest.raises(ValueError):
            Partition(np.array([0, 1]))
        with pytest.raises(IndexError):
            Partition(np.array([1, 1])).members(2)

    def test_csv_round_trip(self, tmp_path):
        p = Partition(np.array([2, 1, 1, 3, 2]))
        p.to_csv(tmp_path / "p.csv")
        assert np.array_equal(Partition.from_csv(tmp_path / "p.csv").labels, p.labels)


class TestSbm:
    def test_same_seed_same_graph(self):
        cfg = SbmConfig(5, 4, 0.7, 0.1, seed=11)
        assert np.array_equal(sample_sbm(cfg).weights, sample_sbm(cfg).weights)

    def test_extreme_probabilities_give_planted_blocks(self):
        g = sample_sbm(SbmConfig(3, 4, 1.0, 0.0, seed=0))
        labels = planted_partition(3, 4).labels
        expected = (labels[:, None] == labels[None, :]).astype(float) - np.eye(12)
        assert np.array_equal(g.weights, expected)
        assert estimate_edge_probs(g, planted_partition(3, 4)) == (1.0, 0.0)

    def test_warns_when_not_assortative(self):
        with pytest.warns(UserWarning):
            SbmConfig(2, 3, 0.2, 0.5)

    def test_edge_probability_estimates_are_unbiased(self):
        cfg = [SbmConfig(10, 10, 0.6, 0.2, seed=s) for s in range(40)]
        est = np.array([estimate_edge_probs(sample_sbm(c), planted_partition(10, 10)) for c in cfg])
        # sd of the mean: p over 40*900 pairs, q over 40*9000 pairs
        assert abs(est[:, 0].mean() - 0.6) < 4 * np.sqrt(0.24 / 36000)
        assert abs(est[:, 1].mean() - 0.2) < 4 * np.sqrt(0.16 / 360000)


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_edge_counts_match_brute_force(data):
    g = data.draw(binary_graphs())
    part = data.draw(labelings(g.n))
    within = w_pairs = between = b_pairs = 0
    for i in range(g.n):
        for j in range(g.n):
            if i == j:
                continue
            if part.labels[i] == part.labels[j]:
                within += g.weights[i, j]
                w_pairs += 1
            else:
                between += g.weights[i, j]
                b_pairs += 1
    assert edge_counts(g, part) == (within, w_pairs, between, b_pairs)
    if w_pairs == 0:
        with pytest.raises(NoWithinPairsError):
            estimate_edge_probs(g, part)
    elif b_pairs == 0:
        with pytest.raises(NoBetweenPairsError):
            estimate_edge_probs(g, part)
    else:
        assert estimate_edge_probs(g, part) == (within / w_pairs, between / b_pairs)


@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_block_submatrix_rows_and_columns(data):
    g = data.draw(binary_graphs())
    part = data.draw(labelings(g.n))
    for k in range(1, part.K + 1):
        idx = np.flatnonzero(part.labels == k)
        assert np.array_equal(block_submatrix(g, part, k), g.weights[idx][:, idx])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(0, 1e6, allow_subnormal=False)))
def test_csv_round_trips(tmp_path_factory, w):
    np.fill_diagonal(w, 0.0)
    g = DirectedGraph(w)
    d = tmp_path_factory.mktemp("io")
    write_adjacency_csv(g, d / "a.csv")
    write_edge_list_csv(g, d / "e.csv")
    assert np.array_equal(read_adjacency_csv(d / "a.csv").weights, w)
    assert np.array_equal(read_edge_list_csv(d / "e.csv", n=5).weights, w)


def test_malformed_csv_reports_line(tmp_path):
    (tmp_path / "a.csv").write_text("0,1\n0,x\n")
    with pytest.raises(ValueError, match=":2:"):
        read_adjacency_csv(tmp_path / "a.csv")
    (tmp_path / "e.csv").write_text("src,dst,weight\n0,1,1\n0\n")
    with pytest.raises(ValueError, match=":3:"):
        read_edge_list_csv(tmp_path / "e.csv")


def test_hand_counted_edge_probabilities():
    w = np.zeros((4, 4))
    w[0, 1] = w[2, 3] = w[0, 2] = 1.0
    assert estimate_edge_probs(DirectedGraph(w), Partition(np.array([1, 1, 2, 2]))) == (0.5, 0.125)


def test_block_by_hand():
    w = np.arange(16, dtype=float).reshape(4, 4)
    np.fill_diagonal(w, 0.0)
    part = Partition(np.array([1, 2, 1, 2]))
    assert block_submatrix(DirectedGraph(w), part, 1).tolist() == [[0.0, 2.0], [8.0, 0.0]]
    assert np.array_equal(block_submatrix(DirectedGraph(w), Partition.single(4), 1), w)
    assert not block_submatrix(DirectedGraph.empty(4), part, 2).any()


def test_two_by_two_degenerate_blocks():
    g = sample_sbm(SbmConfig(2, 2, 1.0, 0.0, seed=3))
    assert g.weights.tolist() == [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]


def test_within_density_over_many_samples():
    part = planted_partition(20, 10)
    dens = [estimate_edge_probs(sample_sbm(SbmConfig(20, 10, 0.8, 0.0, seed=s)), part)[0] for s in range(1000)]
    assert abs(np.mean(dens) - 0.8) < 0.01


def test_estimation_error_at_larger_size():
    part = planted_partition(40, 10)
    est = np.array([estimate_edge_probs(sample_sbm(SbmConfig(40, 10, 0.6, 0.2, seed=s)), part) for s in range(500)])
    assert np.mean(np.abs(est[:, 0] - 0.6)) < 0.01
    assert np.mean(np.abs(est[:, 1] - 0.2)) < 0.005
