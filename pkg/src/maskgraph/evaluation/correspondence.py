"""Landmark correspondence across a population, measured against known true curves.

Every predicted landmark is projected onto its sample's true boundary and
read off as a normalized arc-length parameter ``t ∈ [0, 1)``. A landmark index
that always lands on the same anatomical location has the same ``t`` in every
sample; its dispersion is measured on the circle (angle ``2πt``) so that
contours wrap around.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import numpy.typing as npt
import pandas as pd

from maskgraph.errors import ShapeError


class CurveOracle(Protocol):
    def project(self, points: npt.ArrayLike, organ: int = 1) -> npt.NDArray[np.float64]: ...


@dataclass(frozen=True)
class CorrespondenceStats:
    """Per landmark index: circular mean and circular std of ``t``, both in parameter units."""

    mean: npt.NDArray[np.float64]
    std: npt.NDArray[np.float64]

    @property
    def summary(self) -> float:
        return float(self.std.mean())

    def to_frame(self, organ: int) -> pd.DataFrame:
        return pd.DataFrame(
            {"organ": organ, "index": np.arange(len(self.mean)), "circular_mean": self.mean, "circular_std": self.std}
        )


def _wrap(angle: np.ndarray) -> np.ndarray:
    return np.angle(np.exp(1j * angle))


def circular_spread(t: npt.ArrayLike) -> CorrespondenceStats:
    """Circular statistics of a (samples, landmarks) array of arc-length parameters.

    Each sample is first rotated so its circular mean matches the first
    sample's, which removes a per-sample shift of the whole contour. The std
    of an index is the root mean square of the wrapped angular deviations from
    the index's circular mean, divided by 2π; it is 0 for perfect agreement and
    ``1/√12 ≈ 0.289`` for uniformly scattered parameters.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 1:
        raise ShapeError(f"expected a (samples, landmarks) array, got shape {t.shape}")
    angles = 2 * np.pi * t
    sample_means = np.angle(np.exp(1j * angles).mean(axis=1))
    aligned = angles - (sample_means - sample_means[0])[:, None]
    index_means = np.angle(np.exp(1j * aligned).mean(axis=0))
    deviations = _wrap(aligned - index_means[None, :])
    std = np.sqrt((deviations**2).mean(axis=0)) / (2 * np.pi)
    mean = (index_means / (2 * np.pi)) % 1.0
    return CorrespondenceStats(mean=mean, std=std)


def correspondence_consistency(
    predictions: Sequence[npt.ArrayLike], oracles: Sequence[CurveOracle], organ: int = 1
) -> CorrespondenceStats:
    """Correspondence statistics of one organ's landmarks over a population.

    Args:
        predictions: per sample, the organ's (n, 2) landmarks in pixel units
        oracles: per sample, the true curve parameterization
        organ: organ whose curve the landmarks are projected onto

    Raises:
        ShapeError: if the samples disagree on the landmark count
    """
    if len(predictions) != len(oracles):
        raise ShapeError(f"{len(predictions)} predictions but {len(oracles)} oracles")
    counts = {len(np.asarray(p)) for p in predictions}
    if len(counts) > 1:
        raise ShapeError(f"landmark counts differ across samples: {sorted(counts)}")
    t = np.stack([oracle.project(points, organ) for points, oracle in zip(predictions, oracles, strict=True)])
    return circular_spread(t)
