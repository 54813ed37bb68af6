"""Block-diagonal topologies of independent closed contours."""

from collections.abc import Mapping

import numpy as np
from loguru import logger
from scipy import sparse

from maskgraph.errors import TopologyError
from maskgraph.topology.graph import GraphTopology, LevelGraph, edges_from_cycles, resolution_counts


def circular_pooling(n_fine: int, n_coarse: int) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Pooling and unpooling matrices of one circular contour.

    ``D[i, 2i] = D[i, (2i+1) mod n_fine] = 1/2`` and ``U[j, floor(j/2)] = 1``.
    When ``n_fine`` is odd the trailing node is not pooled and unpools from
    the last coarse node.
    """
    rows = np.repeat(np.arange(n_coarse), 2)
    cols = np.stack([2 * np.arange(n_coarse), (2 * np.arange(n_coarse) + 1) % n_fine], axis=1).ravel()
    down = sparse.csr_matrix((np.full(2 * n_coarse, 0.5), (rows, cols)), shape=(n_coarse, n_fine))
    parents = np.minimum(np.arange(n_fine) // 2, n_coarse - 1)
    up = sparse.csr_matrix((np.ones(n_fine), (np.arange(n_fine), parents)), shape=(n_fine, n_coarse))
    return down, up


def build_independent(counts: Mapping[int, int], levels: int) -> GraphTopology:
    """Independent circular graphs, one per organ, assembled block-diagonally.

    Args:
        counts: organ id → finest-level landmark count
        levels: number of resolution levels

    Returns:
        GraphTopology: node indices are offset organ by organ in the given order

    Raises:
        TopologyError: if any organ falls below 3 nodes at some level
    """
    organs = tuple(counts)
    if not organs:
        raise TopologyError("no organs given")
    per_organ = {organ: resolution_counts(int(counts[organ]), levels) for organ in organs}

    graphs = []
    for r in range(levels):
        cycles, membership, offset = {}, [], 0
        for organ in organs:
            n = per_organ[organ][r]
            cycles[organ] = tuple(range(offset, offset + n))
            membership.extend([frozenset({organ})] * n)
            offset += n
        graphs.append(
            LevelGraph(
                num_nodes=offset,
                edges=edges_from_cycles(cycles.values()),
                membership=tuple(membership),
                organ_cycles=cycles,
            )
        )

    down, up = [], []
    for r in range(levels - 1):
        blocks = [circular_pooling(per_organ[o][r], per_organ[o][r + 1]) for o in organs]
        down.append(sparse.block_diag([d for d, _ in blocks], format="csr"))
        up.append(sparse.block_diag([u for _, u in blocks], format="csr"))

    logger.debug(f"Independent topology with node counts {[g.num_nodes for g in graphs]}")
    return GraphTopology(organs=organs, mode="independent", levels=tuple(graphs), down=tuple(down), up=tuple(up))
