"""Soft and hard polygon rasterization.

Pixels are sampled at their centers ``(x + 0.5, y + 0.5)`` in pixel units
(x right, y down). The soft rasterizer maps the signed distance to the polygon
through a logistic with smoothness ``sigma``; its backward pass is analytic
through the nearest segment.
"""

from collections.abc import Mapping

import numpy as np
import numpy.typing as npt
import torch
from torch import nn
from torch.autograd import Function

# edge chunk for the numpy kernels, bounds memory at (pixels × chunk)
_CHUNK = 256
_ON_BOUNDARY = 1e-9


def pixel_centers(height: int, width: int) -> npt.NDArray[np.float64]:
    """Pixel-center coordinates as a (height·width, 2) array of (x, y), row-major."""
    ys, xs = np.meshgrid(np.arange(height) + 0.5, np.arange(width) + 0.5, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def polygon_area(polygon: npt.ArrayLike) -> float:
    """Signed shoelace area (positive for clockwise order in image coordinates)."""
    p = np.asarray(polygon, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _is_degenerate(polygon: np.ndarray) -> bool:
    return len(polygon) < 3 or abs(polygon_area(polygon)) < 1e-12


def _segment_distance(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest polygon segment."""
    a = polygon
    b = np.roll(polygon, -1, axis=0)
    best = np.full(len(points), np.inf)
    for start in range(0, len(a), _CHUNK):
        sa, sb = a[start : start + _CHUNK], b[start : start + _CHUNK]
        d = sb - sa
        len2 = np.einsum("ij,ij->i", d, d)
        ap = points[:, None, :] - sa[None, :, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(len2 > 0, np.einsum("pij,ij->pi", ap, d) / len2, 0.0)
        t = np.clip(t, 0.0, 1.0)
        diff = ap - t[..., None] * d[None]
        best = np.minimum(best, np.sqrt(np.einsum("pij,pij->pi", diff, diff)).min(axis=1))
    return best


def _crossing_parity(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Crossing-number inside test (True for odd crossings)."""
    a = polygon
    b = np.roll(polygon, -1, axis=0)
    px, py = points[:, 0:1], points[:, 1:2]
    inside = np.zeros(len(points), dtype=bool)
    for start in range(0, len(a), _CHUNK):
        ax, ay = a[start : start + _CHUNK, 0], a[start : start + _CHUNK, 1]
        bx, by = b[start : start + _CHUNK, 0], b[start : start + _CHUNK, 1]
        straddles = (ay > py) != (by > py)
        with np.errstate(invalid="ignore", divide="ignore"):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
        crossings = np.count_nonzero(straddles & (px < x_cross), axis=1)
        inside ^= (crossings % 2).astype(bool)
    return inside


def signed_distance(point: npt.ArrayLike, polygon: npt.ArrayLike) -> float:
    """Signed distance from a point to a closed polygon.

    Positive inside, negative outside, zero on the boundary. A polygon whose
    vertices are all collinear has no inside, so every point is outside.

    Args:
        point: (x, y) in pixel units
        polygon: ordered vertices, at least 3

    Returns:
        float: the signed distance
    """
    p = np.asarray(point, dtype=np.float64).reshape(1, 2)
    poly = np.asarray(polygon, dtype=np.float64)
    if len(poly) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    dist = float(_segment_distance(p, poly)[0])
    if dist <= _ON_BOUNDARY:
        return 0.0
    if _is_degenerate(poly):
        return -dist
    return dist if bool(_crossing_parity(p, poly)[0]) else -dist


def hard_rasterize(polygon: npt.ArrayLike, height: int, width: int) -> npt.NDArray[np.bool_]:
    """Binary raster: a pixel is set iff its center is inside or on the polygon."""
    poly = np.asarray(polygon, dtype=np.float64)
    if len(poly) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    if _is_degenerate(poly):
        return np.zeros((height, width), dtype=bool)
    points = pixel_centers(height, width)
    inside = _crossing_parity(points, poly) | (_segment_distance(points, poly) <= _ON_BOUNDARY)
    return inside.reshape(height, width)


def _nearest_segments(points: torch.Tensor, vertices: torch.Tensor):
    a = vertices
    b = torch.roll(vertices, shifts=-1, dims=0)
    d = b - a
    len2 = (d * d).sum(dim=1)
    ap = points[:, None, :] - a[None, :, :]
    t = torch.where(len2 > 0, (ap * d[None]).sum(dim=2) / len2.clamp_min(1e-300), torch.zeros_like(ap[..., 0]))
    t = t.clamp(0.0, 1.0)
    diff = ap - t[..., None] * d[None]
    dist = torch.linalg.vector_norm(diff, dim=2)
    # argmin returns the first minimum, so ties go to the earliest segment
    index = torch.argmin(dist, dim=1)
    rows = torch.arange(len(points))
    return index, t[rows, index], diff[rows, index], dist[rows, index]


def _inside(points: torch.Tensor, vertices: torch.Tensor) -> torch.Tensor:
    a = vertices
    b = torch.roll(vertices, shifts=-1, dims=0)
    px, py = points[:, 0:1], points[:, 1:2]
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    straddles = (ay > py) != (by > py)
    denom = torch.where(by == ay, torch.ones_like(by), by - ay)
    x_cross = ax + (py - ay) * (bx - ax) / denom
    crossings = (straddles & (px < x_cross)).sum(dim=1)
    return (crossings % 2) == 1


class SoftPolygonFunction(Function):
    """Logistic-of-signed-distance rasterizer with an analytic backward.

    Forward: ``M[p] = sigmoid(sd(p, polygon) / sigma)`` at every pixel center.
    Backward: the distance derivative flows to the two endpoints of the nearest
    segment, weighted by ``1 - t`` and ``t`` where ``t`` is the projection
    parameter; the inside/outside sign is locally constant.
    """

    @staticmethod
    def forward(ctx, vertices: torch.Tensor, height: int, width: int, sigma: float) -> torch.Tensor:
        points = torch.as_tensor(pixel_centers(height, width), dtype=vertices.dtype, device=vertices.device)
        index, t, diff, dist = _nearest_segments(points, vertices)
        degenerate = _is_degenerate(vertices.detach().cpu().numpy())
        if degenerate:
            sign = -torch.ones_like(dist)
        else:
            sign = torch.where(_inside(points, vertices), 1.0, -1.0).to(dist.dtype)
        values = torch.sigmoid(sign * dist / sigma)
        ctx.save_for_backward(values, index, t, diff, dist, sign)
        ctx.sigma = sigma
        ctx.num_vertices = len(vertices)
        return values.reshape(height, width)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor):
        values, index, t, diff, dist, sign = ctx.saved_tensors
        n = ctx.num_vertices
        g = grad_output.reshape(-1) * values * (1.0 - values) * sign / ctx.sigma
        # unit vector from the pixel to its closest boundary point: d(dist)/d(closest point)
        safe = dist > 1e-12
        unit = torch.where(safe[:, None], -diff / dist.clamp_min(1e-12)[:, None], torch.zeros_like(diff))
        grad = torch.zeros((n, 2), dtype=values.dtype, device=values.device)
        grad.index_add_(0, index, (g * (1.0 - t))[:, None] * unit)
        grad.index_add_(0, (index + 1) % n, (g * t)[:, None] * unit)
        return grad, None, None, None


def soft_polygon(vertices: torch.Tensor, height: int, width: int, sigma: float = 1.0) -> torch.Tensor:
    """Soft mask (height × width, values in (0, 1)) of one polygon in pixel units."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return SoftPolygonFunction.apply(vertices, height, width, sigma)


def soft_rasterize(
    landmarks: Mapping[int, torch.Tensor], height: int, width: int, sigma: float = 1.0
) -> dict[int, torch.Tensor]:
    """Soft-rasterize one polygon per organ.

    Args:
        landmarks: organ id → (n, 2) vertices in pixel units
        height: raster height in pixels
        width: raster width in pixels
        sigma: transition width in pixels

    Returns:
        dict[int, torch.Tensor]: organ id → soft mask
    """
    return {organ: soft_polygon(vertices, height, width, sigma) for organ, vertices in landmarks.items()}


class SoftPolygon(nn.Module):
    """Module wrapper around :class:`SoftPolygonFunction` for batches of polygons."""

    def __init__(self, height: int = 64, width: int = 64, sigma: float = 1.0):
        super().__init__()
        self.height = height
        self.width = width
        self.sigma = sigma

    def forward(self, vertices: torch.Tensor) -> torch.Tensor:
        if vertices.dim() == 2:
            return soft_polygon(vertices, self.height, self.width, self.sigma)
        return torch.stack([soft_polygon(v, self.height, self.width, self.sigma) for v in vertices])
