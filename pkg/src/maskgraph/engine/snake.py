"""Direct landmark fitting to a single target mask.

The landmark coordinates themselves are the optimization variables: no
network and no latent code, so the objective is Chamfer + pixel + edge terms
with constant weights.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
import torch
from loguru import logger
from scipy.spatial import cKDTree

from maskgraph.config import SnakeConfig
from maskgraph.contours import extract_organ_contours
from maskgraph.engine.optim import OptState, adam_step
from maskgraph.errors import ContourError, TrainingDivergedError
from maskgraph.losses import (
    LossBundle,
    LossParts,
    LossWeights,
    chamfer_loss,
    edge_regularizers,
    pixel_loss,
    total_loss,
)
from maskgraph.rasterizer import soft_rasterize
from maskgraph.topology.graph import GraphTopology, LevelGraph


@dataclass
class SnakeResult:
    """Fitted landmarks (pixel units) and the loss trace of the run."""

    landmarks: npt.NDArray[np.float64]
    losses: list[float] = field(default_factory=list)
    present: tuple[int, ...] = ()


def boundary_points(mask: npt.ArrayLike, organs: Sequence[int]) -> dict[int, npt.NDArray[np.float64]]:
    """Boundary pixel centers of each organ present in ``mask`` (largest component)."""
    return {organ: contour.centers() for organ, contour in extract_organ_contours(mask, organs).items()}


def initial_landmarks(mask: npt.ArrayLike, graph: LevelGraph) -> npt.NDArray[np.float64]:
    """Landmarks on a circle per organ, at the mask centroid with the organ's equal-area radius.

    Each cycle starts at the top of its circle and runs clockwise in image
    coordinates. Nodes on several organ boundaries take the mean of their
    positions. An absent organ collapses to the image center.
    """
    labels = np.asarray(mask)
    height, width = labels.shape
    sums = np.zeros((graph.num_nodes, 2))
    hits = np.zeros(graph.num_nodes)
    for organ, cycle in graph.organ_cycles.items():
        ys, xs = np.nonzero(labels == organ)
        if len(xs):
            center = np.array([xs.mean() + 0.5, ys.mean() + 0.5])
            radius = math.sqrt(len(xs) / math.pi)
        else:
            logger.warning(f"Organ {organ} absent from the target mask; its landmarks stay at the image center")
            center, radius = np.array([width / 2, height / 2]), 0.0
        theta = -np.pi / 2 + 2 * np.pi * np.arange(len(cycle)) / len(cycle)
        points = center + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        np.add.at(sums, list(cycle), points)
        np.add.at(hits, list(cycle), 1.0)
    return sums / np.maximum(hits, 1.0)[:, None]


def snake_loss(
    coords: torch.Tensor,
    graph: LevelGraph,
    truth: dict[int, torch.Tensor],
    targets: dict[int, torch.Tensor],
    topology: GraphTopology,
    weights: LossWeights,
    sigma: float,
) -> LossBundle:
    """Objective of one fitting step; ``coords`` is (N, 2) in normalized units."""
    height, width = next(iter(targets.values())).shape
    side = max(height, width)
    present = list(truth)
    polygons = graph.split(coords)
    chamfer = chamfer_loss(polygons, truth, present)
    soft = soft_rasterize({o: polygons[o] * side for o in present}, height, width, sigma)
    pixel = pixel_loss(soft, targets, present)
    edges = edge_regularizers(coords, topology.edge_tensor(0), organs=present)
    return total_loss(LossParts(chamfer=chamfer, pixel=pixel, edges=edges), weights)


def snake_fit(
    mask: npt.ArrayLike,
    topology: GraphTopology,
    cfg: SnakeConfig | None = None,
    sigma: float = 1.0,
    iterations: int | None = None,
    init: npt.ArrayLike | None = None,
) -> SnakeResult:
    """Fit the finest topology level to a label mask by Adam on the coordinates.

    Args:
        mask: target label mask
        topology: fixed graph whose finest level is fitted
        cfg: weights, learning rate and its exponential decay
        sigma: soft rasterization width in pixels
        iterations: overrides ``cfg.iterations``
        init: (N, 2) starting landmarks in pixel units; default circles

    Raises:
        ContourError: if none of the topology's organs occurs in ``mask``
        TrainingDivergedError: on a non-finite loss
    """
    cfg = cfg or SnakeConfig()
    iterations = cfg.iterations if iterations is None else iterations
    labels = np.asarray(mask)
    height, width = labels.shape
    side = max(height, width)
    graph = topology.levels[0]

    points = boundary_points(labels, topology.organs)
    if not points:
        raise ContourError(f"target mask contains none of the organs {list(topology.organs)}")
    present = tuple(points)
    truth = {o: torch.as_tensor(p / side) for o, p in points.items()}
    targets = {o: torch.as_tensor((labels == o).astype(np.float64)) for o in present}

    start = initial_landmarks(labels, graph) if init is None else np.asarray(init, dtype=np.float64)
    coords = torch.nn.Parameter(torch.as_tensor(start / side))
    state = OptState.create([("landmarks", coords)], lr=cfg.learning_rate)
    decay = torch.optim.lr_scheduler.ExponentialLR(
        state.optimizer, gamma=cfg.final_lr_fraction ** (1.0 / max(iterations, 1))
    )
    weights = LossWeights(
        lambda_c=cfg.lambda_c, lambda_p=cfg.lambda_p, lambda_k=0.0, alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma
    )

    losses = []
    for it in range(iterations):
        state.zero_grad()
        bundle = snake_loss(coords, graph, truth, targets, topology, weights, sigma)
        if not bool(torch.isfinite(bundle.total)):
            record = bundle.as_record()
            message = f"non-finite snake loss at iteration {it}: {record}"
            raise TrainingDivergedError(message, iteration=it, terms=record)
        bundle.total.backward()
        adam_step(state)
        decay.step()
        losses.append(bundle.total.detach().item())
        if it % 50 == 0:
            logger.debug(f"snake iteration {it}: loss {losses[-1]:.6g}")
    return SnakeResult(landmarks=coords.detach().numpy() * side, losses=losses, present=present)


def snap_landmarks(
    landmarks: npt.ArrayLike, mask: npt.ArrayLike, graph: LevelGraph
) -> npt.NDArray[np.float64]:
    """Move each landmark to the nearest boundary pixel center of its organ in ``mask``.

    Nodes of organs absent from the mask stay where they are. A node on
    several organ boundaries follows the first of them that is present.
    """
    result = np.array(landmarks, dtype=np.float64, copy=True)
    points = boundary_points(mask, list(graph.organ_cycles))
    done: set[int] = set()
    for organ, cycle in graph.organ_cycles.items():
        if organ not in points:
            continue
        nodes = [v for v in cycle if v not in done]
        if not nodes:
            continue
        _, nearest = cKDTree(points[organ]).query(result[nodes])
        result[nodes] = points[organ][nearest]
        done.update(nodes)
    return result
