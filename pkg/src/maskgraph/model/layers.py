"""Graph and sampling layers of the landmark decoder."""

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy import sparse

from maskgraph.errors import ShapeError


def scaled_laplacian(adjacency: sparse.spmatrix) -> torch.Tensor:
    """Dense rescaled Laplacian ``2L/λ_max - I`` of a graph, with ``λ_max = 2``.

    ``L`` is the symmetric normalized Laplacian ``I - D^{-1/2} A D^{-1/2}``, so
    the result is ``-D^{-1/2} A D^{-1/2}``. Isolated nodes get zero rows.
    """
    a = sparse.csr_matrix(adjacency, dtype=np.float64)
    degree = np.asarray(a.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(degree > 0, 1.0 / np.sqrt(degree), 0.0)
    scaled = -(sparse.diags(inv_sqrt) @ a @ sparse.diags(inv_sqrt))
    return torch.as_tensor(scaled.toarray(), dtype=torch.float64)


def cheb_conv(x: torch.Tensor, laplacian: torch.Tensor, theta: torch.Tensor, order: int | None = None) -> torch.Tensor:
    """Chebyshev spectral graph convolution ``Σ_k T_k(L̃) X Θ_k``.

    Args:
        x: (..., V, F_in) node features
        laplacian: (V, V) scaled Laplacian
        theta: (K, F_in, F_out) coefficients
        order: number of polynomial terms to use (default ``K``)

    Returns:
        (..., V, F_out) node features, without bias or activation
    """
    order = theta.shape[0] if order is None else order
    if not 1 <= order <= theta.shape[0]:
        raise ShapeError(f"Chebyshev order {order} exceeds the {theta.shape[0]} coefficient slices")
    t_prev, t_cur = x, None
    out = t_prev @ theta[0]
    if order > 1:
        t_cur = laplacian @ x
        out = out + t_cur @ theta[1]
    for k in range(2, order):
        t_prev, t_cur = t_cur, 2.0 * (laplacian @ t_cur) - t_prev
        out = out + t_cur @ theta[k]
    return out


class ChebConv(nn.Module):
    def __init__(self, in_features: int, out_features: int, order: int):
        super().__init__()
        if order < 1:
            raise ShapeError(f"Chebyshev order must be at least 1, got {order}")
        self.order = order
        self.weight = nn.Parameter(torch.empty(order, in_features, out_features, dtype=torch.float64))
        self.bias = nn.Parameter(torch.empty(out_features, dtype=torch.float64))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        bound = 1.0 / math.sqrt(self.weight.shape[1] * self.order)
        nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x: torch.Tensor, laplacian: torch.Tensor) -> torch.Tensor:
        return cheb_conv(x, laplacian, self.weight) + self.bias


def igsc_sample(feature_map: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample a feature map at landmark positions.

    Coordinates are normalized to ``[0, 1]`` with pixel ``i`` centered at
    ``(i + 0.5) / size``; they are clamped to the outermost pixel centers, where
    the coordinate gradient is zero.

    Args:
        feature_map: (B, C, H, W)
        coords: (B, N, 2) as (x, y)

    Returns:
        (B, N, C) sampled features
    """
    height, width = feature_map.shape[-2:]
    lo = coords.new_tensor([0.5 / width, 0.5 / height])
    clamped = torch.maximum(torch.minimum(coords, 1.0 - lo), lo)
    grid = (2.0 * clamped - 1.0).unsqueeze(1)
    sampled = F.grid_sample(feature_map, grid, mode="bilinear", padding_mode="border", align_corners=False)
    return sampled.squeeze(2).transpose(1, 2)


def igsc(node_features: torch.Tensor, feature_map: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Image-to-graph skip connection: node features, sampled features and coordinates, concatenated."""
    return torch.cat([node_features, igsc_sample(feature_map, coords), coords], dim=-1)


def reparameterize(mu: torch.Tensor, log_var: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """``z = mu + exp(log_var / 2) * eps``; pass zeros for the posterior mean."""
    if not mu.shape == log_var.shape == eps.shape:
        raise ShapeError("mu, log_var and eps must have the same shape")
    return mu + torch.exp(0.5 * log_var) * eps
