"""Unified multi-organ graphs with shared boundary nodes.

Organ contours from an atlas mask are resampled to their landmark counts, and
points of different organs closer than ``delta`` are merged into shared nodes.
Coarser levels merge adjacent degree-2 nodes in pairs while junctions (degree
3 or more) are carried through unchanged.
"""

from collections.abc import Mapping

import numpy as np
import numpy.typing as npt
from loguru import logger
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from maskgraph.config import DEFAULT_DELTA
from maskgraph.contours import Contour
from maskgraph.errors import TopologyError
from maskgraph.topology.graph import GraphTopology, LevelGraph, edges_from_cycles


def resample_closed(points: npt.ArrayLike, n: int) -> npt.NDArray[np.float64]:
    """Resample a closed polyline to ``n`` points equally spaced in arc length.

    The first output point is the first input point.
    """
    p = np.asarray(points, dtype=np.float64)
    closed = np.vstack([p, p[:1]])
    steps = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    if arc[-1] == 0:
        return np.repeat(p[:1], n, axis=0)
    targets = np.arange(n) * arc[-1] / n
    return np.stack([np.interp(targets, arc, closed[:, 0]), np.interp(targets, arc, closed[:, 1])], axis=1)


def _dedupe_cycle(cycle: list[int]) -> tuple[int, ...]:
    out = [v for k, v in enumerate(cycle) if k == 0 or v != cycle[k - 1]]
    while len(out) > 1 and out[-1] == out[0]:
        out.pop()
    return tuple(out)


def _check_cycles(cycles: Mapping[int, tuple[int, ...]], what: str) -> None:
    for organ, cycle in cycles.items():
        if len(set(cycle)) < 3:
            raise TopologyError(f"{what} leaves organ {organ} with {len(set(cycle))} distinct nodes")


def merge_contours(
    atlas_contours: Mapping[int, Contour], delta: float, counts: Mapping[int, int]
) -> LevelGraph:
    """Finest unified level: resample, then merge nearby points of different organs.

    Merging is transitive (union-find over all pairs within ``delta``); a merged
    node sits at the centroid of its points and belongs to every organ among them.
    """
    if delta <= 0:
        raise TopologyError(f"merge distance must be positive, got {delta}")
    organs = list(atlas_contours)
    sampled = [resample_closed(atlas_contours[o].centers(), int(counts[o])) for o in organs]
    points = np.vstack(sampled)
    owner = np.concatenate([np.full(len(s), o) for o, s in zip(organs, sampled, strict=True)])

    close = np.array(sorted(cKDTree(points).query_pairs(r=delta)), dtype=np.int64).reshape(-1, 2)
    close = close[owner[close[:, 0]] != owner[close[:, 1]]]
    graph = sparse.coo_matrix(
        (np.ones(len(close)), (close[:, 0], close[:, 1])), shape=(len(points), len(points))
    )
    _, component = connected_components(graph, directed=False)

    # node ids in order of first appearance
    node_of_component: dict[int, int] = {}
    node_of_point = np.empty(len(points), dtype=np.int64)
    for k, c in enumerate(component):
        node_of_point[k] = node_of_component.setdefault(int(c), len(node_of_component))
    num_nodes = len(node_of_component)

    positions = np.zeros((num_nodes, 2))
    np.add.at(positions, node_of_point, points)
    positions /= np.bincount(node_of_point, minlength=num_nodes)[:, None]
    membership: list[set[int]] = [set() for _ in range(num_nodes)]
    for k, node in enumerate(node_of_point):
        membership[node].add(int(owner[k]))

    cycles, offset = {}, 0
    for organ, s in zip(organs, sampled, strict=True):
        cycles[organ] = _dedupe_cycle(node_of_point[offset : offset + len(s)].tolist())
        offset += len(s)
    _check_cycles(cycles, "merging")

    shared = sum(1 for m in membership if len(m) > 1)
    if len(organs) > 1 and shared == 0:
        logger.warning(f"No contour points of different organs lie within {delta:.3f} px; graphs stay independent")
    logger.info(f"Unified graph: {num_nodes} nodes, {shared} shared")
    return LevelGraph(
        num_nodes=num_nodes,
        edges=edges_from_cycles(cycles.values()),
        membership=tuple(frozenset(m) for m in membership),
        organ_cycles=cycles,
        positions=positions,
    )


def coarsen_unified(graph: LevelGraph) -> tuple[LevelGraph, sparse.csr_matrix, sparse.csr_matrix]:
    """Pool one unified level into the next coarser one.

    Each organ cycle is walked from its first junction (or, without junctions,
    from its lowest node index). Runs of not-yet-pooled degree-2 nodes are
    paired consecutively; an odd run keeps its last node alone. Junctions and
    leftovers map to their own coarse node with weight 1, pairs with weight 1/2.
    Coarse nodes are numbered by their lowest fine constituent.

    Returns:
        (coarse level, D of shape (N_coarse, N_fine), U of shape (N_fine, N_coarse))

    Raises:
        TopologyError: if an organ cycle would drop below 3 nodes
    """
    junction = graph.degrees() >= 3
    assigned = np.full(graph.num_nodes, -1, dtype=np.int64)
    groups: list[list[int]] = []

    def claim(members: list[int]) -> None:
        for v in members:
            assigned[v] = len(groups)
        groups.append(members)

    def flush(run: list[int]) -> None:
        for k in range(0, len(run), 2):
            claim(run[k : k + 2])

    for cycle in map(list, graph.organ_cycles.values()):
        starts = [k for k, v in enumerate(cycle) if junction[v]]
        first = starts[0] if starts else int(np.argmin(cycle))
        run: list[int] = []
        for v in cycle[first:] + cycle[:first]:
            if junction[v] or assigned[v] >= 0 or v in run:
                flush(run)
                run = []
                if assigned[v] < 0:
                    claim([v])
            else:
                run.append(v)
        flush(run)

    for v in np.nonzero(assigned < 0)[0]:
        claim([int(v)])

    # renumber by lowest fine constituent
    order = sorted(range(len(groups)), key=lambda g: min(groups[g]))
    rank = np.empty(len(groups), dtype=np.int64)
    rank[order] = np.arange(len(groups))
    coarse_of = rank[assigned]
    members = [groups[g] for g in order]
    n_coarse = len(members)

    rows = np.concatenate([np.full(len(m), i) for i, m in enumerate(members)])
    cols = np.concatenate([np.array(m) for m in members])
    weights = np.concatenate([np.full(len(m), 1.0 / len(m)) for m in members])
    down = sparse.csr_matrix((weights, (rows, cols)), shape=(n_coarse, graph.num_nodes))
    up = sparse.csr_matrix(
        (np.ones(graph.num_nodes), (np.arange(graph.num_nodes), coarse_of)), shape=(graph.num_nodes, n_coarse)
    )

    cycles = {o: _dedupe_cycle(coarse_of[list(c)].tolist()) for o, c in graph.organ_cycles.items()}
    _check_cycles(cycles, "coarsening")
    membership = tuple(frozenset().union(*(graph.membership[v] for v in m)) for m in members)
    positions = None if graph.positions is None else down @ graph.positions
    coarse = LevelGraph(
        num_nodes=n_coarse,
        edges=edges_from_cycles(cycles.values()),
        membership=membership,
        organ_cycles=cycles,
        positions=positions,
    )
    return coarse, down, up


def build_unified(
    atlas_contours: Mapping[int, Contour],
    delta: float = DEFAULT_DELTA,
    counts: Mapping[int, int] | None = None,
    levels: int = 1,
) -> GraphTopology:
    """Unified topology from the contours of an atlas mask.

    Args:
        atlas_contours: organ id → contour, every organ of the group present
        delta: merge distance in pixels
        counts: organ id → finest-level landmark count; defaults to contour length
        levels: number of resolution levels

    Returns:
        GraphTopology: unified levels with D/U between them

    Raises:
        TopologyError: when merging or coarsening collapses an organ cycle
    """
    if not atlas_contours:
        raise TopologyError("atlas has no organ contours")
    counts = counts or {o: len(c) for o, c in atlas_contours.items()}
    graphs = [merge_contours(atlas_contours, delta, counts)]
    down, up = [], []
    for _ in range(levels - 1):
        coarse, d, u = coarsen_unified(graphs[-1])
        graphs.append(coarse)
        down.append(d)
        up.append(u)
    return GraphTopology(
        organs=tuple(atlas_contours), mode="unified", levels=tuple(graphs), down=tuple(down), up=tuple(up)
    )
