"""Model validation, graph reachability sets and index-set construction."""
import numpy as np
import pytest

import dlmpc
from dlmpc import (
    ModelValidationError,
    NetworkModel,
    build_chain_model,
    build_graph,
    build_locality_index,
    d_in_set,
    d_out_set,
)


def two_node_model():
    return NetworkModel(
        state_dims=(2, 1),
        input_dims=(1, 1),
        a_blocks={
            (1, 1): np.array([[1.0, 0.1], [0.0, 0.9]]),
            (2, 2): np.array([[0.8]]),
            (2, 1): np.array([[0.2, 0.0]]),
        },
        b_blocks={(1, 1): np.array([[0.0], [1.0]]), (2, 2): np.array([[1.0]])},
    )


class TestNetworkModel:
    def test_dimensions(self):
        m = two_node_model()
        assert m.n_subsystems == 2
        assert m.n_states == 3
        assert m.n_inputs == 2
        assert m.state_offsets == (0, 2)
        assert m.input_offsets == (0, 1)
        assert m.state_indices(2).tolist() == [2]
        assert m.input_indices(1).tolist() == [0]

    def test_full_matrices(self):
        m = two_node_model()
        a = np.array([[1.0, 0.1, 0.0], [0.0, 0.9, 0.0], [0.2, 0.0, 0.8]])
        b = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(m.full_a(), a)
        np.testing.assert_array_equal(m.full_b(), b)

    def test_rejects_wrong_block_shape(self):
        with pytest.raises(ModelValidationError):
            NetworkModel(
                state_dims=(2,),
                input_dims=(1,),
                a_blocks={(1, 1): np.zeros((2, 3))},
                b_blocks={(1, 1): np.zeros((2, 1))},
            )

    def test_rejects_out_of_range_key(self):
        with pytest.raises(ModelValidationError):
            NetworkModel(
                state_dims=(1,),
                input_dims=(1,),
                a_blocks={(1, 2): np.ones((1, 1))},
                b_blocks={},
            )

    def test_rejects_nonpositive_state_dim(self):
        with pytest.raises(ModelValidationError):
            NetworkModel(state_dims=(0,), input_dims=(1,), a_blocks={}, b_blocks={})

    def test_zero_input_subsystem_allowed(self):
        m = NetworkModel(
            state_dims=(1, 1),
            input_dims=(1, 0),
            a_blocks={(1, 1): np.ones((1, 1)), (2, 1): np.ones((1, 1))},
            b_blocks={(1, 1): np.ones((1, 1))},
        )
        assert m.n_inputs == 1
        assert m.input_indices(2).size == 0


class TestGraph:
    def test_edges_from_nonzero_blocks(self):
        g = build_graph(two_node_model())
        assert g.n_vertices == 2
        # subsystem 2 depends on 1 through its coupling block
        assert 1 in g.predecessors(2)
        assert 2 in g.successors(1)
        assert 2 not in g.predecessors(1)

    def test_zero_block_makes_no_edge(self):
        m = NetworkModel(
            state_dims=(1, 1),
            input_dims=(1, 1),
            a_blocks={
                (1, 1): np.ones((1, 1)),
                (2, 2): np.ones((1, 1)),
                (2, 1): np.zeros((1, 1)),
            },
            b_blocks={(1, 1): np.ones((1, 1)), (2, 2): np.ones((1, 1))},
        )
        g = build_graph(m)
        assert 1 not in g.predecessors(2)

    def test_six_node_reach_sets(self, six_node_graph):
        g = six_node_graph
        assert d_in_set(g, 5, 1) == frozenset({3, 4, 5})
        assert d_out_set(g, 5, 1) == frozenset({4, 5, 6})
        assert d_in_set(g, 5, 2) == frozenset({2, 3, 4, 5})
        assert d_out_set(g, 5, 2) == frozenset({4, 5, 6})

    def test_self_membership_always(self, six_node_graph):
        for i in range(1, 7):
            for d in range(4):
                assert i in d_in_set(six_node_graph, i, d)
                assert i in d_out_set(six_node_graph, i, d)

    def test_zero_radius(self, six_node_graph):
        assert d_in_set(six_node_graph, 2, 0) == frozenset({2})

    def test_chain_sets(self):
        g = build_graph(build_chain_model(5))
        assert d_in_set(g, 3, 1) == frozenset({2, 3, 4})
        assert d_out_set(g, 3, 1) == frozenset({2, 3, 4})
        assert d_in_set(g, 1, 2) == frozenset({1, 2, 3})

    def test_bad_vertex_raises(self, six_node_graph):
        with pytest.raises(IndexError):
            d_in_set(six_node_graph, 7, 1)
        with pytest.raises(ValueError):
            d_out_set(six_node_graph, 1, -1)


class TestLocalityIndex:
    def test_row_layout(self, six_node_index):
        idx = six_node_index
        # time-major state rows, then time-major input rows
        assert idx.n_rows == 6 * 4 + 6 * 3
        sub = idx.subsystem(5)
        t_hor, n = idx.horizon, idx.n_states
        expected_state_rows = [t * n + 4 for t in range(t_hor + 1)]
        expected_input_rows = [n * (t_hor + 1) + t * 6 + 4 for t in range(t_hor)]
        assert sub.rows[sub.row_is_state].tolist() == expected_state_rows
        assert sub.rows[~sub.row_is_state].tolist() == expected_input_rows

    def test_masks_follow_reach_sets(self, six_node_model, six_node_graph):
        idx = build_locality_index(six_node_graph, six_node_model, d=1, horizon=2)
        # state row of node 5 may touch columns of its 1-hop incoming set
        assert set(np.where(idx.mask_x[4])[0]) == {2, 3, 4}
        # input row of node 5 may touch columns of its 2-hop incoming set
        assert set(np.where(idx.mask_u[4])[0]) == {1, 2, 3, 4}
        assert idx.phi_mask.shape == (idx.n_rows, 6)

    def test_row_partition_covers_rows_once(self, six_node_index):
        idx = six_node_index
        seen = np.concatenate([s.rows for s in idx.subsystems])
        assert sorted(seen.tolist()) == list(range(idx.n_rows))

    def test_row_mask_matches_global_mask(self, six_node_index):
        idx = six_node_index
        rebuilt = np.zeros((idx.n_rows, idx.n_states), dtype=bool)
        for sub in idx.subsystems:
            rebuilt[np.ix_(sub.rows, sub.row_cols)] = sub.row_mask
        np.testing.assert_array_equal(rebuilt, idx.phi_mask)

    def test_column_partition_covers_allowed_entries(self, six_node_index):
        idx = six_node_index
        covered = np.zeros((idx.n_rows, idx.n_states), dtype=int)
        for sub in idx.subsystems:
            covered[np.ix_(sub.col_rows, sub.cols)] += 1
        # each allowed entry is owned by exactly one column partition
        assert np.all(covered[idx.phi_mask] == 1)
        # column partitions never extend beyond the allowed pattern
        assert np.all(covered[~idx.phi_mask] == 0)

    def test_chain_index_consistency(self):
        model = build_chain_model(5)
        graph = build_graph(model)
        idx = build_locality_index(graph, model, d=1, horizon=4)
        for sub in idx.subsystems:
            # state rows allow exactly the incoming-set columns
            srows = sub.row_mask[sub.row_is_state]
            allowed = set(sub.row_cols[np.where(srows[0])[0]].tolist())
            expected = set(
                np.concatenate(
                    [model.state_indices(j) for j in idx.in_sets[sub.sub_id - 1]]
                ).tolist()
            )
            assert allowed == expected
            # input rows use the full extended footprint
            assert np.all(sub.row_mask[~sub.row_is_state])

    def test_locality_zero_restricts_to_self(self, six_node_model, six_node_graph):
        idx = build_locality_index(six_node_graph, six_node_model, d=0, horizon=2)
        assert set(np.where(idx.mask_x[0])[0]) == {0}

    def test_package_version(self):
        assert dlmpc.__version__
