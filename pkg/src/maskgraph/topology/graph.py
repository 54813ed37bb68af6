"""Graph topologies shared by every sample of a population."""

import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import sparse

from maskgraph.config import fingerprint
from maskgraph.errors import TopologyError
from maskgraph.topology.edges import EdgeTensor, edge_tensor


def landmark_count(mean_len: float, s: float, n_min: int) -> int:
    """Number of landmarks for an organ: ``max(floor(mean_len * s), n_min)``.

    A tolerance of 1e-9 absorbs products such as ``290 * 0.1`` that land just
    below an integer in binary floating point.
    """
    if mean_len <= 0:
        raise TopologyError(f"mean contour length must be positive, got {mean_len}")
    if not 0 < s <= 1:
        raise TopologyError(f"scale factor must lie in (0, 1], got {s}")
    if n_min < 3:
        raise TopologyError(f"minimum landmark count must be at least 3, got {n_min}")
    return max(math.floor(mean_len * s + 1e-9), n_min)


def resolution_counts(n1: int, levels: int) -> list[int]:
    """Node counts per resolution level, halving (with floor) at each level."""
    if n1 < 3:
        raise TopologyError(f"finest level needs at least 3 nodes, got {n1}")
    if levels < 1:
        raise TopologyError(f"need at least one resolution level, got {levels}")
    counts = [n1 // 2 ** (r - 1) for r in range(1, levels + 1)]
    if counts[-1] < 3:
        raise TopologyError(f"{levels} levels from {n1} nodes leave {counts[-1]} nodes at the coarsest level")
    return counts


@dataclass(frozen=True, eq=False)
class LevelGraph:
    """One resolution level of a topology.

    Attributes:
        num_nodes: node count over all organs
        edges: undirected pairs (i, j) with i < j, sorted
        membership: per node, the organs whose boundary it lies on
        organ_cycles: organ → node indices in contour order
        positions: optional (num_nodes, 2) atlas coordinates in pixels
    """

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    membership: tuple[frozenset[int], ...]
    organ_cycles: dict[int, tuple[int, ...]]
    positions: npt.NDArray[np.float64] | None = None

    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric 0/1 adjacency matrix."""
        if not self.edges:
            return sparse.csr_matrix((self.num_nodes, self.num_nodes))
        i, j = np.array(self.edges).T
        data = np.ones(2 * len(i))
        return sparse.csr_matrix(
            (data, (np.r_[i, j], np.r_[j, i])), shape=(self.num_nodes, self.num_nodes)
        )

    def degrees(self) -> npt.NDArray[np.int64]:
        return np.asarray(self.adjacency().sum(axis=1)).ravel().astype(np.int64)

    def junctions(self) -> frozenset[int]:
        """Nodes of degree at least 3."""
        return frozenset(int(v) for v in np.nonzero(self.degrees() >= 3)[0])

    def counts(self) -> dict[int, int]:
        return {organ: len(cycle) for organ, cycle in self.organ_cycles.items()}

    def shared_boundary(self, a: int, b: int) -> list[int]:
        """Nodes lying on the boundary of both organs ``a`` and ``b``."""
        return [v for v, m in enumerate(self.membership) if a in m and b in m]

    def split(self, coords):
        """Per-organ polygons of a (..., num_nodes, 2) numpy array or tensor, in contour order."""
        return {organ: coords[..., list(cycle), :] for organ, cycle in self.organ_cycles.items()}

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_nodes": self.num_nodes,
            "edges": [list(e) for e in self.edges],
            "membership": [sorted(m) for m in self.membership],
            "organ_cycles": {str(o): list(c) for o, c in self.organ_cycles.items()},
            "positions": None if self.positions is None else self.positions.tolist(),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "LevelGraph":
        positions = raw.get("positions")
        return cls(
            num_nodes=int(raw["num_nodes"]),
            edges=tuple(tuple(int(v) for v in e) for e in raw["edges"]),
            membership=tuple(frozenset(int(o) for o in m) for m in raw["membership"]),
            organ_cycles={int(o): tuple(int(v) for v in c) for o, c in raw["organ_cycles"].items()},
            positions=None if positions is None else np.asarray(positions, dtype=np.float64),
        )


def edges_from_cycles(cycles: Iterable[tuple[int, ...]]) -> tuple[tuple[int, int], ...]:
    """Undirected edge set joining consecutive nodes of every cycle, self-loops dropped."""
    pairs = set()
    for cycle in cycles:
        for k, i in enumerate(cycle):
            j = cycle[(k + 1) % len(cycle)]
            if i != j:
                pairs.add((min(i, j), max(i, j)))
    return tuple(sorted(pairs))


def _sparse_to_dict(matrix: sparse.spmatrix) -> dict[str, Any]:
    coo = sparse.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    return {
        "shape": list(coo.shape),
        "rows": coo.row[order].tolist(),
        "cols": coo.col[order].tolist(),
        "values": coo.data[order].tolist(),
    }


def _sparse_from_dict(raw: Mapping[str, Any]) -> sparse.csr_matrix:
    return sparse.csr_matrix((raw["values"], (raw["rows"], raw["cols"])), shape=tuple(raw["shape"]))


@dataclass(frozen=True, eq=False)
class GraphTopology:
    """Multi-resolution boundary graph.

    ``levels[0]`` is the finest level. ``down[r]`` pools level ``r`` into level
    ``r + 1`` (shape ``N_{r+1} × N_r``) and ``up[r]`` distributes level ``r + 1``
    back to level ``r`` (shape ``N_r × N_{r+1}``).
    """

    organs: tuple[int, ...]
    mode: str
    levels: tuple[LevelGraph, ...]
    down: tuple[sparse.csr_matrix, ...] = field(default=())
    up: tuple[sparse.csr_matrix, ...] = field(default=())

    def __post_init__(self):
        if len(self.down) != len(self.levels) - 1 or len(self.up) != len(self.levels) - 1:
            raise TopologyError("need one down and one up matrix between consecutive levels")

    @property
    def resolution_levels(self) -> int:
        return len(self.levels)

    def num_nodes(self, level: int = 0) -> int:
        return self.levels[level].num_nodes

    def junctions(self, level: int = 0) -> frozenset[int]:
        return self.levels[level].junctions()

    def shared_boundary(self, a: int, b: int, level: int = 0) -> list[int]:
        return self.levels[level].shared_boundary(a, b)

    def organ_index(self, organ: int) -> int:
        return self.organs.index(organ)

    def edge_tensor(self, level: int = 0) -> EdgeTensor:
        return edge_tensor(self.levels[level], self.organs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "organs": list(self.organs),
            "mode": self.mode,
            "node_counts": [level.counts() for level in self.levels],
            "levels": [level.to_dict() for level in self.levels],
            "down": [_sparse_to_dict(d) for d in self.down],
            "up": [_sparse_to_dict(u) for u in self.up],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "GraphTopology":
        try:
            return cls(
                organs=tuple(int(o) for o in raw["organs"]),
                mode=str(raw["mode"]),
                levels=tuple(LevelGraph.from_dict(level) for level in raw["levels"]),
                down=tuple(_sparse_from_dict(d) for d in raw["down"]),
                up=tuple(_sparse_from_dict(u) for u in raw["up"]),
            )
        except KeyError as e:
            raise TopologyError(f"topology document lacks key {e}") from e

    def fingerprint(self) -> str:
        """Hash of the structural content (positions excluded)."""
        payload = self.to_dict()
        for level in payload["levels"]:
            level.pop("positions", None)
        return fingerprint(payload)

    def save(self, path: Path) -> Path:
        """Write the topology and its finest-level edge tensor as JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = self.to_dict()
        payload["edge_tensor"] = self.edge_tensor(0).to_dict()
        path.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "GraphTopology":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise TopologyError(f"topology file not found: {path}") from e
        return cls.from_dict(raw)
