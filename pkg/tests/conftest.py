"""Shared fixtures and finite-difference helpers."""

import os

import numpy as np
import pytest
import torch

from maskgraph.config import ModelConfig, RunConfig
from maskgraph.data.masks import Sample
from maskgraph.topology import build_independent

ACCEPTANCE = os.getenv("RUN_MASKGRAPH_ACCEPTANCE") == "1"


def central_difference(fn, x: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Numerical gradient of a scalar function by central differences, entry by entry."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat, out = x.view(-1), grad.view(-1)
    for k in range(flat.numel()):
        saved = flat[k].item()
        flat[k] = saved + h
        plus = float(fn(x))
        flat[k] = saved - h
        minus = float(fn(x))
        flat[k] = saved
        out[k] = (plus - minus) / (2 * h)
    return grad


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    scale = max(float(numeric.abs().max()), float(analytic.abs().max()), 1e-12)
    return float((analytic - numeric).abs().max()) / scale


def disk_mask(size: int, center: tuple[float, float], radius: float, label: int = 1) -> np.ndarray:
    """Label mask of the pixels whose centers lie within ``radius`` of ``center``."""
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    inside = (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius**2
    return np.where(inside, label, 0).astype(np.uint8)


def make_sample(mask: np.ndarray, subject_id: str = "s0", organs: tuple[int, ...] = (1,), seed: int = 0) -> Sample:
    rng = np.random.default_rng(seed)
    image = np.clip(0.7 * (mask > 0) + rng.normal(0.0, 0.05, mask.shape), 0.0, 1.0)
    return Sample(image=image, mask=mask, subject_id=subject_id, annotated_organs=organs)


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    return ModelConfig(encoder_widths=(2, 4), latent_dim=3, cheb_order=2, cheb_layers=1, graph_width=4)


@pytest.fixture
def ring_topology():
    """One organ, 12 landmarks, two resolution levels."""
    return build_independent({1: 12}, 2)


@pytest.fixture
def tiny_run_config() -> RunConfig:
    return RunConfig.from_mapping(
        {
            "inputsize": 16,
            "resolutions": 2,
            "seed": 3,
            "model": {"encoder_widths": [2, 4], "latent_dim": 3, "cheb_order": 2, "cheb_layers": 1, "graph_width": 4},
            "train": {"iterations": 6, "batch_size": 2, "val_every": 3, "learning_rate": 1e-3},
        }
    )


@pytest.fixture
def disk_samples() -> list[Sample]:
    """Four 16×16 single-organ samples of slightly different disks."""
    params = [((8.0, 8.0), 4.5), ((7.5, 8.5), 5.0), ((8.5, 7.5), 4.0), ((8.0, 8.5), 5.5)]
    return [make_sample(disk_mask(16, c, r), subject_id=f"s{k}", seed=k) for k, (c, r) in enumerate(params)]
