"""Padded per-organ edge tensors for the edge regularizers."""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np
import numpy.typing as npt


class _HasCycles(Protocol):
    organ_cycles: Mapping[int, Sequence[int]]


@dataclass(frozen=True, eq=False)
class EdgeTensor:
    """Directed contour edges of every organ, padded to a common length.

    Attributes:
        organs: organ ids, one per row
        edges: (O, M, 2) node pairs (i, j) in contour order; padding is (0, 0)
        valid: (O, M) False on padding slots
        edge_organ_map: (O·M,) row index of every flattened slot
        pairs: (O, M, 2) slot indices (a, b) of consecutive edges (i, j), (j, k)
        pair_valid: (O, M) False on padding and where i == k
    """

    organs: tuple[int, ...]
    edges: npt.NDArray[np.int64]
    valid: npt.NDArray[np.bool_]
    edge_organ_map: npt.NDArray[np.int64]
    pairs: npt.NDArray[np.int64]
    pair_valid: npt.NDArray[np.bool_]

    @property
    def max_edges(self) -> int:
        return self.edges.shape[1]

    def adjacency(self) -> set[tuple[int, int]]:
        """Undirected pair set spanned by the valid edges."""
        i, j = self.edges[self.valid].T
        return {(int(min(a, b)), int(max(a, b))) for a, b in zip(i, j, strict=True) if a != b}

    def to_dict(self) -> dict[str, Any]:
        return {
            "organs": list(self.organs),
            "edges": self.edges.tolist(),
            "valid": self.valid.tolist(),
            "edge_organ_map": self.edge_organ_map.tolist(),
            "pairs": self.pairs.tolist(),
            "pair_valid": self.pair_valid.tolist(),
        }


def edge_tensor(graph: _HasCycles, organs: Sequence[int] | None = None) -> EdgeTensor:
    """Build the padded edge tensor of one resolution level.

    Organ ``o`` with cycle ``c`` of length ``n`` contributes edges
    ``(c[k], c[k+1 mod n])`` and consecutive pairs ``(k, k+1 mod n)``.
    A node shared by several organs appears in each of their edge lists.
    """
    organs = tuple(graph.organ_cycles) if organs is None else tuple(organs)
    cycles = [list(graph.organ_cycles[o]) for o in organs]
    width = max((len(c) for c in cycles), default=0)

    edges = np.zeros((len(organs), width, 2), dtype=np.int64)
    valid = np.zeros((len(organs), width), dtype=bool)
    pairs = np.zeros((len(organs), width, 2), dtype=np.int64)
    pair_valid = np.zeros((len(organs), width), dtype=bool)

    for row, cycle in enumerate(cycles):
        n = len(cycle)
        for k in range(n):
            edges[row, k] = (cycle[k], cycle[(k + 1) % n])
            pairs[row, k] = (k, (k + 1) % n)
            pair_valid[row, k] = cycle[k] != cycle[(k + 2) % n]
        valid[row, :n] = True

    edge_organ_map = np.repeat(np.arange(len(organs), dtype=np.int64), width)
    return EdgeTensor(
        organs=organs,
        edges=edges,
        valid=valid,
        edge_organ_map=edge_organ_map,
        pairs=pairs,
        pair_valid=pair_valid,
    )
