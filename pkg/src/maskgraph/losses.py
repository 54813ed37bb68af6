"""Training losses on landmark graphs.

Landmark coordinates are normalized: pixel-center coordinates divided by the
longer image side, so one weight set serves every resolution. All functions
take and return float64 tensors and are differentiated by autograd; the
per-organ mean edge length and the perimeter weights are held constant during
differentiation.
"""

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F
from loguru import logger

from maskgraph.config import LossConfig
from maskgraph.errors import ContourError
from maskgraph.topology.edges import EdgeTensor

BCE_CLAMP = 1e-7
DICE_SMOOTH = 1.0


def value_and_grad(fn: Callable[..., torch.Tensor], *inputs: torch.Tensor) -> tuple[float, tuple[torch.Tensor, ...]]:
    """Evaluate a scalar loss and its gradient with respect to ``inputs``.

    Inputs that do not influence the loss get zero gradients.
    """
    leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
    value = fn(*leaves)
    grads = torch.autograd.grad(value, leaves, allow_unused=True)
    filled = tuple(torch.zeros_like(x) if g is None else g for x, g in zip(leaves, grads, strict=True))
    return value.detach().item(), filled


def _chamfer_pair(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    d2 = ((p[:, None, :] - g[None, :, :]) ** 2).sum(dim=-1)
    # argmin keeps the lowest index among ties
    to_truth = ((p - g[torch.argmin(d2, dim=1)]) ** 2).sum(dim=-1).mean()
    to_pred = ((g - p[torch.argmin(d2, dim=0)]) ** 2).sum(dim=-1).mean()
    return to_truth + to_pred


def chamfer_loss(
    predicted: Mapping[int, torch.Tensor],
    truth: Mapping[int, torch.Tensor],
    annotated: Iterable[int],
) -> torch.Tensor:
    """Symmetric mean-of-min squared distance, summed over annotated organs.

    Args:
        predicted: organ → (n, 2) landmarks
        truth: organ → (m, 2) ground-truth boundary points
        annotated: organs whose ground truth is available; others contribute 0

    Raises:
        ContourError: if an annotated organ has no truth points
    """
    total = torch.zeros((), dtype=torch.float64)
    for organ in annotated:
        if organ not in predicted:
            continue
        g = truth.get(organ)
        if g is None or len(g) == 0:
            raise ContourError(f"annotated organ {organ} has no ground-truth points")
        total = total + _chamfer_pair(predicted[organ], g.to(predicted[organ].dtype))
    return total


def pixel_loss(
    soft: Mapping[int, torch.Tensor],
    gt: Mapping[int, torch.Tensor],
    annotated: Iterable[int],
) -> torch.Tensor:
    """Soft Dice loss plus binary cross-entropy, averaged over annotated organs."""
    organs = [o for o in annotated if o in soft]
    if not organs:
        return torch.zeros((), dtype=torch.float64)
    total = torch.zeros((), dtype=torch.float64)
    for organ in organs:
        s, g = soft[organ], gt[organ].to(soft[organ].dtype)
        dice = 1.0 - (2.0 * (s * g).sum() + DICE_SMOOTH) / (s.sum() + g.sum() + DICE_SMOOTH)
        bce = F.binary_cross_entropy(s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP), g)
        total = total + dice + bce
    return total / len(organs)


def kl_loss(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """KL divergence from N(mu, exp(log_var)) to the unit Gaussian.

    Summed over the last dimension and averaged over any leading batch dimensions.
    """
    if mu.shape != log_var.shape:
        raise ValueError(f"mu {tuple(mu.shape)} and log_var {tuple(log_var.shape)} differ in shape")
    kl = -0.5 * (1.0 + log_var - mu**2 - log_var.exp()).sum(dim=-1)
    return kl.mean() if kl.dim() else kl


@dataclass
class EdgeTerms:
    """Edge regularizers of one landmark set and the per-organ statistics behind them."""

    uniform: torch.Tensor
    elastic: torch.Tensor
    curvature: torch.Tensor
    mean_lengths: torch.Tensor
    perimeters: torch.Tensor
    weights: torch.Tensor


def edge_regularizers(
    coords: torch.Tensor, edges: EdgeTensor, organs: Iterable[int] | None = None
) -> EdgeTerms:
    """Uniform-length, elastic and curvature terms over contour edges.

    Each term is an organ mean, weighted by ``w_o = P_o / max P`` and averaged
    over organs. Mean edge lengths and weights are detached.

    Args:
        coords: (..., N, 2) landmarks; leading dimensions are averaged
        edges: padded edge tensor of the landmark level
        organs: restrict to these organs (default all rows of ``edges``)
    """
    rows = list(range(len(edges.organs))) if organs is None else [edges.organs.index(o) for o in organs]
    device = coords.device
    pairs = torch.as_tensor(edges.edges[rows], device=device)
    mask = torch.as_tensor(edges.valid[rows], device=device).to(coords.dtype)
    steps = torch.as_tensor(edges.pairs[rows], device=device)
    step_mask = torch.as_tensor(edges.pair_valid[rows], device=device).to(coords.dtype)

    vec = coords[..., pairs[..., 0], :] - coords[..., pairs[..., 1], :]
    sq = (vec**2).sum(dim=-1) * mask
    positive = sq > 0
    length = torch.where(positive, torch.sqrt(torch.where(positive, sq, torch.ones_like(sq))), torch.zeros_like(sq))

    count = mask.sum(dim=-1).clamp_min(1.0)
    perimeter = length.detach().sum(dim=-1)
    mean_len = perimeter / count
    longest = perimeter.max(dim=-1, keepdim=True).values
    weights = torch.where(longest > 0, perimeter / longest.clamp_min(1e-300), torch.zeros_like(perimeter))
    if bool((perimeter == 0).any()):
        logger.warning("Organ with zero perimeter: its edge weight is set to 0")

    safe_mean = torch.where(mean_len > 0, mean_len, torch.ones_like(mean_len))
    rel = (length - safe_mean[..., None]) / safe_mean[..., None]
    uniform_o = torch.where(mean_len > 0, (rel**2 * mask).sum(dim=-1) / count, torch.zeros_like(mean_len))
    elastic_o = sq.sum(dim=-1) / count

    organ_rows = torch.arange(len(rows), device=device)[:, None]
    first = vec[..., organ_rows, steps[..., 0], :]
    second = vec[..., organ_rows, steps[..., 1], :]
    bend = ((first - second) ** 2).sum(dim=-1) * step_mask
    curvature_o = bend.sum(dim=-1) / step_mask.sum(dim=-1).clamp_min(1.0)

    n_organs = max(len(rows), 1)

    def reduce(term: torch.Tensor) -> torch.Tensor:
        value = (weights * term).sum(dim=-1) / n_organs
        return value.mean() if value.dim() else value

    return EdgeTerms(
        uniform=reduce(uniform_o),
        elastic=reduce(elastic_o),
        curvature=reduce(curvature_o),
        mean_lengths=mean_len,
        perimeters=perimeter,
        weights=weights,
    )


def _scalar(value: torch.Tensor | float) -> float:
    return value.detach().item() if isinstance(value, torch.Tensor) else float(value)


@dataclass
class LossWeights:
    lambda_c: float = 10.0
    lambda_p: float = 1.0
    lambda_k: float = 1e-6
    alpha: float = 1e-6
    beta: float = 300.0
    gamma: float = 250.0

    @classmethod
    def initial(cls, cfg: LossConfig) -> "LossWeights":
        """Weights at the start of a scheduled run."""
        return cls(
            lambda_c=cfg.lambda_c,
            lambda_p=cfg.lambda_p if cfg.raster else 0.0,
            lambda_k=cfg.lambda_k_start,
            alpha=cfg.alpha_start,
            beta=cfg.beta,
            gamma=cfg.gamma,
        )


@dataclass
class LossParts:
    """Unweighted loss terms of one sample or batch. Missing terms count as zero."""

    chamfer: torch.Tensor | None = None
    pixel: torch.Tensor | None = None
    kld: torch.Tensor | None = None
    edges: EdgeTerms | None = None


@dataclass
class LossBundle:
    """Every loss term, its weight and the combined objective."""

    chamfer: torch.Tensor
    pixel: torch.Tensor
    kld: torch.Tensor
    uniform: torch.Tensor
    elastic: torch.Tensor
    curvature: torch.Tensor
    edge: torch.Tensor
    total: torch.Tensor
    weights: LossWeights
    edge_stats: EdgeTerms | None = None

    def gradients(self, inputs: Sequence[torch.Tensor]) -> tuple[torch.Tensor, ...]:
        """Gradient of the total with respect to each input (zeros where unused)."""
        if not self.total.requires_grad:
            return tuple(torch.zeros_like(x) for x in inputs)
        grads = torch.autograd.grad(self.total, list(inputs), retain_graph=True, allow_unused=True)
        return tuple(torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads, strict=True))

    def as_record(self) -> dict[str, float]:
        """Flat float record of every term and weight, for loss logs."""
        record = {
            name: _scalar(getattr(self, name))
            for name in ("chamfer", "pixel", "kld", "uniform", "elastic", "curvature", "edge", "total")
        }
        record.update({f.name: _scalar(getattr(self.weights, f.name)) for f in fields(self.weights)})
        return record


def total_loss(parts: LossParts, weights: LossWeights) -> LossBundle:
    """Weighted sum ``λ_c·chamfer + λ_p·pixel + λ_k·kld + edge``.

    The edge term is ``α·uniform + β·elastic + γ·curvature``; its outer weight is 1.
    """
    zero = torch.zeros((), dtype=torch.float64)
    chamfer = zero if parts.chamfer is None else parts.chamfer
    pixel = zero if parts.pixel is None else parts.pixel
    kld = zero if parts.kld is None else parts.kld
    uniform = zero if parts.edges is None else parts.edges.uniform
    elastic = zero if parts.edges is None else parts.edges.elastic
    curvature = zero if parts.edges is None else parts.edges.curvature

    edge = weights.alpha * uniform + weights.beta * elastic + weights.gamma * curvature
    total = weights.lambda_c * chamfer + weights.lambda_p * pixel + weights.lambda_k * kld + edge
    return LossBundle(
        chamfer=chamfer,
        pixel=pixel,
        kld=kld,
        uniform=uniform,
        elastic=elastic,
        curvature=curvature,
        edge=edge,
        total=total,
        weights=weights,
        edge_stats=parts.edges,
    )
