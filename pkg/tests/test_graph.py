import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdgcl.graph import (GraphError, SparseOperator, build_interactions, build_laplacian,
                         build_normalized_adjacency, build_splits, parse_interaction_lines, spmm)

from conftest import dense_normalized_adjacency, random_interactions


def test_build_minimal():
    inter = build_interactions([("u1", "i1")])
    assert (inter.num_users, inter.num_items, len(inter)) == (1, 1, 1)


def test_build_dedups():
    assert len(build_interactions([("u1", "i1"), ("u1", "i1")])) == 1


def test_popularity_counts():
    inter = build_interactions([("u1", "i1"), ("u2", "i1")])
    assert inter.popularity.tolist() == [2]
    assert inter.user_degree.sum() == len(inter)


def test_first_seen_order():
    inter = build_interactions([("b", "y"), ("a", "x"), ("b", "x")])
    assert inter.user_ids == ("b", "a")
    assert inter.item_ids == ("y", "x")
    assert inter.to_records() == [("b", "y"), ("a", "x"), ("b", "x")]


def test_empty_rejected():
    with pytest.raises(GraphError, match="no interaction"):
        build_interactions([])


def test_parse_lines_skips_comments_and_reports_line():
    recs = parse_interaction_lines(["# header\n", "u1\ti1\n", "\n", "u2\ti2\n"])
    assert recs == [("u1", "i1"), ("u2", "i2")]
    with pytest.raises(GraphError, match=r"data.tsv:3"):
        parse_interaction_lines(["u1\ti1\n", "# c\n", "u2 i2\n"], "data.tsv")


def test_splits_share_catalog():
    train, test = build_splits([("u1", "i1")], [("u2", "i2"), ("u1", "i2")])
    assert train.num_users == test.num_users == 2
    assert train.num_items == test.num_items == 2
    assert test.contains([1, 0], [1, 1]).tolist() == [True, True]


def test_adjacency_single_edge():
    adj = build_normalized_adjacency(build_interactions([("u", "i")]))
    np.testing.assert_array_equal(adj.to_dense(), [[0.5, 0.5], [0.5, 0.5]])


def test_adjacency_two_users_one_item():
    adj = build_normalized_adjacency(build_interactions([("u1", "i"), ("u2", "i")])).to_dense()
    # node order: u1, u2, i ; D̄ = diag(2, 2, 3)
    assert adj[0, 2] == pytest.approx(1 / np.sqrt(6), abs=1e-15)
    assert adj[0, 2] == pytest.approx(0.40825, abs=1e-5)
    assert adj[2, 2] == pytest.approx(1 / 3, abs=1e-15)


def test_isolated_node_gets_unit_self_loop():
    train, _ = build_splits([("u1", "i1")], [("u2", "i1")])
    adj = build_normalized_adjacency(train)
    row = slice(adj.row_offsets[1], adj.row_offsets[2])
    assert adj.col_indices[row].tolist() == [1]
    assert adj.values[row].tolist() == [1.0]


@pytest.mark.parametrize("seed", range(10))
def test_adjacency_matches_dense_oracle(make_graph, seed):
    inter = make_graph(seed, n_nodes=24)
    np.testing.assert_allclose(build_normalized_adjacency(inter).to_dense(),
                               dense_normalized_adjacency(inter), rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([4, 8, 16, 32, 64]),
       density=st.floats(0.02, 0.9))
def test_operator_invariants(seed, n, density):
    inter = random_interactions(np.random.default_rng(seed), n // 2, n - n // 2, density)
    adj = build_normalized_adjacency(inter)
    lap = build_laplacian(adj)
    assert adj.is_symmetric() and lap.is_symmetric()
    a, lt = adj.to_dense(), lap.to_dense()
    np.testing.assert_array_equal(a, a.T)
    ga = np.linalg.eigvalsh(a)
    gl = np.linalg.eigvalsh(lt)
    assert ga.min() > -1 - 1e-10 and ga.max() <= 1 + 1e-10
    assert gl.min() >= -1e-10 and gl.max() < 2
    x = np.random.default_rng(seed).normal(size=(n, 3))
    np.testing.assert_allclose(spmm(lap, x) + spmm(adj, x), x, rtol=0, atol=1e-12)
    np.testing.assert_allclose(spmm(adj, x), a @ x, rtol=0, atol=1e-12)


def test_laplacian_two_nodes():
    adj = build_normalized_adjacency(build_interactions([("u", "i")]))
    np.testing.assert_array_equal(build_laplacian(adj).to_dense(), [[0.5, -0.5], [-0.5, 0.5]])


def test_laplacian_annihilates_constant_on_regular_graph():
    # K_{2,2}: every node has degree 2
    inter = build_interactions([("a", "x"), ("a", "y"), ("b", "x"), ("b", "y")])
    lap = build_laplacian(build_normalized_adjacency(inter))
    np.testing.assert_allclose(spmm(lap, np.ones(4)), 0, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_laplacian_spectrum_is_shifted_adjacency(make_graph, seed):
    adj = build_normalized_adjacency(make_graph(seed, n_nodes=16))
    ga = np.sort(np.linalg.eigvalsh(adj.to_dense()))
    gl = np.sort(np.linalg.eigvalsh(build_laplacian(adj).to_dense()))
    np.testing.assert_allclose(gl, np.sort(1 - ga), atol=1e-12)


def test_laplacian_rejects_non_operator():
    with pytest.raises(GraphError):
        build_laplacian(np.eye(2))


def test_spmm_identity(rng):
    eye = SparseOperator(3, [0, 1, 2, 3], [0, 1, 2], [1.0, 1.0, 1.0])
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(spmm(eye, x), x)


def test_spmm_half_ones():
    op = SparseOperator(2, [0, 2, 4], [0, 1, 0, 1], [0.5] * 4)
    np.testing.assert_array_equal(spmm(op, np.eye(2)), np.full((2, 2), 0.5))


def test_spmm_random_vs_dense(rng):
    dense = np.where(rng.random((32, 32)) < 0.2, rng.normal(size=(32, 32)), 0.0)
    op = SparseOperator.from_scipy(dense)
    x = rng.normal(size=(32, 8))
    assert np.max(np.abs(spmm(op, x) - dense @ x)) < 1e-12


def test_spmm_is_bit_reproducible(make_graph, rng):
    adj = build_normalized_adjacency(make_graph(3, n_nodes=64))
    x = rng.normal(size=(64, 16))
    assert np.array_equal(spmm(adj, x), spmm(adj, x.copy()))


def test_spmm_shape_mismatch():
    op = SparseOperator(2, [0, 1, 2], [0, 1], [1.0, 1.0])
    with pytest.raises(GraphError, match="shape mismatch"):
        spmm(op, np.ones((3, 2)))


@pytest.mark.parametrize("offsets, cols, vals", [
    ([0, 1], [0], [1.0]),            # wrong length
    ([0, 2, 1], [0, 1], [1.0, 1.0]),  # not monotone
    ([0, 1, 2], [0, 5], [1.0, 1.0]),  # column out of range
    ([0, 1, 2], [0, 1], [1.0, np.nan]),
])
def test_sparse_operator_validation(offsets, cols, vals):
    with pytest.raises(GraphError):
        SparseOperator(2, offsets, cols, vals)


def test_operators_are_immutable():
    adj = build_normalized_adjacency(build_interactions([("u", "i")]))
    with pytest.raises(ValueError):
        adj.values[0] = 2.0
