"""Tests for landmark counts, independent and unified topologies, and edge tensors."""

import numpy as np
import pytest
from scipy import sparse

from maskgraph.contours import extract_organ_contours
from maskgraph.errors import TopologyError
from maskgraph.topology import (
    GraphTopology,
    LevelGraph,
    build_independent,
    build_unified,
    circular_pooling,
    coarsen_unified,
    edge_tensor,
    landmark_count,
    resample_closed,
    resolution_counts,
)
from maskgraph.topology.graph import edges_from_cycles

from .conftest import disk_mask


def _level(cycles: dict[int, tuple[int, ...]]) -> LevelGraph:
    num_nodes = max(max(c) for c in cycles.values()) + 1
    membership = [set() for _ in range(num_nodes)]
    for organ, cycle in cycles.items():
        for v in cycle:
            membership[v].add(organ)
    return LevelGraph(
        num_nodes=num_nodes,
        edges=edges_from_cycles(cycles.values()),
        membership=tuple(frozenset(m) for m in membership),
        organ_cycles=cycles,
    )


def _stacked_rectangles():
    """Two 8×16 rectangles stacked vertically, sharing their long side."""
    mask = np.zeros((20, 20), dtype=np.uint8)
    mask[2:10, 2:18] = 1
    mask[10:18, 2:18] = 2
    return extract_organ_contours(mask, [1, 2])


class TestLandmarkCount:
    """Test the landmark count rule."""

    @pytest.mark.parametrize(
        ("mean_len", "s", "n_min", "expected"),
        [(200, 0.10, 16, 20), (100, 0.10, 16, 16), (437, 0.05, 8, 21), (290, 0.10, 16, 29)],
    )
    def test_values(self, mean_len, s, n_min, expected):
        """Test hand-computed landmark counts."""
        assert landmark_count(mean_len, s, n_min) == expected

    @pytest.mark.parametrize(("mean_len", "s", "n_min"), [(0, 0.1, 16), (100, 0.0, 16), (100, 1.5, 16), (100, 0.1, 2)])
    def test_invalid(self, mean_len, s, n_min):
        """Test that out-of-range arguments are rejected."""
        with pytest.raises(TopologyError):
            landmark_count(mean_len, s, n_min)


class TestResolutionCounts:
    """Test per-level node counts."""

    @pytest.mark.parametrize(
        ("n1", "levels", "expected"), [(20, 3, [20, 10, 5]), (21, 3, [21, 10, 5]), (16, 2, [16, 8]), (7, 1, [7])]
    )
    def test_values(self, n1, levels, expected):
        """Test hand-computed halving."""
        assert resolution_counts(n1, levels) == expected

    def test_coarsest_too_small(self):
        """Test that a coarsest level below three nodes is rejected."""
        with pytest.raises(TopologyError, match="coarsest"):
            resolution_counts(10, 3)


class TestIndependent:
    """Test block-diagonal circular topologies."""

    def test_four_cycle(self):
        """Test that node 0 of a 4-cycle neighbors 1 and 3 and all degrees are 2."""
        graph = build_independent({1: 4}, 1).levels[0]
        adjacency = graph.adjacency().toarray()
        assert set(np.nonzero(adjacency[0])[0]) == {1, 3}
        assert graph.degrees().tolist() == [2, 2, 2, 2]
        assert graph.junctions() == frozenset()

    def test_pooling_matrices(self):
        """Test D and U of an 8-node contour."""
        down, up = circular_pooling(8, 4)
        assert down.shape == (4, 8)
        assert down.toarray()[0].tolist() == [0.5, 0.5, 0, 0, 0, 0, 0, 0]
        assert np.array_equal((down @ up).toarray(), np.eye(4))

    def test_block_diagonal(self):
        """Test that organs of 4 and 6 nodes give a 10×10 adjacency with empty off-blocks."""
        adjacency = build_independent({1: 4, 2: 6}, 1).levels[0].adjacency().toarray()
        assert adjacency.shape == (10, 10)
        assert not adjacency[:4, 4:].any()
        assert not adjacency[4:, :4].any()

    def test_all_levels(self):
        """Test D·U = I, unit row sums and degree 2 at every level, odd counts included."""
        topology = build_independent({1: 20, 2: 21}, 3)
        assert [topology.num_nodes(r) for r in range(3)] == [41, 20, 10]
        for r in range(2):
            assert np.array_equal((topology.down[r] @ topology.up[r]).toarray(), np.eye(topology.num_nodes(r + 1)))
            assert np.allclose(topology.down[r].sum(axis=1), 1.0)
            assert (np.asarray(topology.up[r].sum(axis=0)).ravel() >= 1).all()
        for level in topology.levels:
            degrees = level.degrees()
            assert (degrees == 2).all()
            assert degrees.sum() == 2 * len(level.edges)

    def test_odd_trailing_node(self):
        """Test that the trailing node of an odd contour unpools from the last coarse node."""
        _, up = circular_pooling(5, 2)
        assert up.toarray()[4].tolist() == [0.0, 1.0]

    def test_too_few_nodes(self):
        """Test that a level below three nodes is rejected."""
        with pytest.raises(TopologyError):
            build_independent({1: 8, 2: 5}, 2)

    def test_save_load(self, tmp_path):
        """Test that a saved topology loads back with the same fingerprint."""
        topology = build_independent({1: 6, 2: 8}, 2)
        restored = GraphTopology.load(topology.save(tmp_path / "topology.json"))
        assert restored.fingerprint() == topology.fingerprint()
        assert restored.levels[1].organ_cycles == topology.levels[1].organ_cycles


class TestUnified:
    """Test proximity merging of atlas contours."""

    def test_resample_closed(self):
        """Test equal arc-length resampling that starts at the first point."""
        square = np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]])
        points = resample_closed(square, 8)
        assert np.allclose(points[:3], [[0, 0], [2, 0], [4, 0]])
        assert np.allclose(points[-1], [0, 2])

    def test_shared_side(self):
        """Test that the sampled points on the shared side merge into nodes owned by both organs."""
        topology = build_unified(_stacked_rectangles(), counts={1: 11, 2: 11})
        graph = topology.levels[0]
        shared = topology.shared_boundary(1, 2)
        assert len(shared) == 4
        assert graph.num_nodes == 18
        assert all(graph.membership[v] == {1, 2} for v in shared)
        assert np.allclose(sorted(graph.positions[shared, 0]), [3.0, 7.0, 11.0, 15.0])
        assert np.allclose(graph.positions[shared, 1], 10.0)
        assert len(graph.junctions()) == 2

    def test_shared_node_in_both_edge_lists(self):
        """Test that a shared node appears in both organs' edge lists."""
        topology = build_unified(_stacked_rectangles(), counts={1: 11, 2: 11})
        tensor = topology.edge_tensor(0)
        node = topology.shared_boundary(1, 2)[0]
        for row in range(2):
            assert node in tensor.edges[row][tensor.valid[row]]

    def test_tiny_delta(self):
        """Test that a small merge distance merges nothing."""
        topology = build_unified(_stacked_rectangles(), delta=0.01, counts={1: 11, 2: 11})
        assert topology.num_nodes(0) == 22
        assert topology.shared_boundary(1, 2) == []

    def test_distant_circles(self):
        """Test that far-apart organs give exactly the independent topology."""
        mask = disk_mask(64, (14.0, 14.0), 8.0) + disk_mask(64, (48.0, 48.0), 8.0, label=2)
        contours = extract_organ_contours(mask, [1, 2])
        unified = build_unified(contours, counts={1: 8, 2: 8}, levels=2)
        independent = build_independent({1: 8, 2: 8}, 2)
        for r in range(2):
            assert unified.levels[r].edges == independent.levels[r].edges
        assert (unified.down[0] != independent.down[0]).nnz == 0
        assert (unified.up[0] != independent.up[0]).nnz == 0

    def test_junctions_preserved(self):
        """Test that both junctions survive coarsening with their membership."""
        topology = build_unified(_stacked_rectangles(), counts={1: 11, 2: 11}, levels=2)
        fine, coarse = topology.levels
        assert len(coarse.junctions()) == 2
        images = {int(topology.down[0][:, v].nonzero()[0][0]) for v in fine.junctions()}
        assert images == set(coarse.junctions())
        for v in coarse.junctions():
            assert coarse.membership[v] == {1, 2}

    def test_membership_monotone(self):
        """Test that coarse nodes own every organ of their constituents."""
        topology = build_unified(_stacked_rectangles(), counts={1: 11, 2: 11}, levels=2)
        down = topology.down[0].tocoo()
        for row, col in zip(down.row, down.col, strict=True):
            assert topology.levels[0].membership[col] <= topology.levels[1].membership[row]

    def test_collapse_rejected(self):
        """Test that a merge distance swallowing an organ is rejected."""
        with pytest.raises(TopologyError):
            build_unified(_stacked_rectangles(), delta=30.0, counts={1: 11, 2: 11})


class TestCoarsenUnified:
    """Test junction-preserving coarsening."""

    def test_isolated_cycle(self):
        """Test that a lone 8-cycle coarsens like the independent pooling."""
        coarse, down, up = coarsen_unified(_level({1: tuple(range(8))}))
        expected_down, expected_up = circular_pooling(8, 4)
        assert coarse.num_nodes == 4
        assert np.array_equal(down.toarray(), expected_down.toarray())
        assert np.array_equal(up.toarray(), expected_up.toarray())

    def test_chain_between_junctions(self):
        """Test that a chain of 5 degree-2 nodes between junctions becomes 3 nodes."""
        graph = _level({1: (0, 2, 3, 4, 5, 6, 1, 7, 8, 9), 2: (0, 10, 11, 12, 1, 6, 5, 4, 3, 2)})
        assert graph.junctions() == {0, 1}
        coarse, down, _ = coarsen_unified(graph)
        chain = down[:, [2, 3, 4, 5, 6]].toarray()
        assert np.count_nonzero(chain.any(axis=1)) == 3
        assert len(coarse.junctions()) == 2
        assert sorted(np.count_nonzero(down.toarray(), axis=1).tolist()) == [1, 1, 1, 1, 1, 2, 2, 2, 2]

    def test_only_junctions(self):
        """Test that a graph of junctions only is left unchanged."""
        graph = _level({1: (0, 1, 2), 2: (0, 2, 3), 3: (0, 3, 1)})
        assert graph.junctions() == {0, 1, 2, 3}
        coarse, down, up = coarsen_unified(graph)
        assert np.array_equal(down.toarray(), np.eye(4))
        assert np.array_equal(up.toarray(), np.eye(4))
        assert coarse.edges == graph.edges


class TestEdgeTensor:
    """Test padded edge tensors."""

    def test_four_cycle(self):
        """Test that a 4-cycle has 4 edges and 4 consecutive pairs."""
        tensor = edge_tensor(build_independent({1: 4}, 1).levels[0])
        assert tensor.edges[0].tolist() == [[0, 1], [1, 2], [2, 3], [3, 0]]
        assert tensor.pairs[0].tolist() == [[0, 1], [1, 2], [2, 3], [3, 0]]
        assert tensor.pair_valid.all()

    def test_padding(self):
        """Test that organs of 4 and 6 nodes pad to 6 slots with (0, 0) entries."""
        tensor = build_independent({1: 4, 2: 6}, 1).edge_tensor(0)
        assert tensor.max_edges == 6
        assert tensor.valid[0].tolist() == [True] * 4 + [False] * 2
        assert tensor.edges[0, 4:].tolist() == [[0, 0], [0, 0]]
        assert not tensor.pair_valid[0, 4:].any()
        assert tensor.edge_organ_map.tolist() == [0] * 6 + [1] * 6

    def test_adjacency_round_trip(self):
        """Test that valid edges reconstruct the adjacency exactly."""
        unified = build_unified(_stacked_rectangles(), counts={1: 11, 2: 11})
        for topology in (build_independent({1: 5, 2: 9}, 1), unified):
            level = topology.levels[0]
            assert topology.edge_tensor(0).adjacency() == set(level.edges)
            upper = sparse.triu(level.adjacency()).tocoo()
            assert set(zip(upper.row.tolist(), upper.col.tolist(), strict=True)) == set(level.edges)
