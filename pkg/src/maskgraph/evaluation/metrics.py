"""Overlap and surface-distance metrics between predicted and reference masks."""

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
from loguru import logger
from scipy import ndimage
from scipy.spatial import cKDTree

from maskgraph.errors import ShapeError
from maskgraph.rasterizer import hard_rasterize
from maskgraph.topology.graph import LevelGraph

_CROSS = ndimage.generate_binary_structure(2, 1)
METRIC_COLUMNS = ["sample", "subject_id", "organ", "dice", "hausdorff_px", "assd_px", "empty", "correspondence"]


def _pair(a: npt.ArrayLike, b: npt.ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a).astype(bool), np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"masks differ in shape: {a.shape} vs {b.shape}")
    return a, b


def dice(a: npt.ArrayLike, b: npt.ArrayLike) -> float:
    """Dice coefficient ``2|a ∩ b| / (|a| + |b|)``; two empty masks score 1."""
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def boundary_pixels(mask: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """(x, y) of foreground pixels with a 4-adjacent background pixel or the image border."""
    binary = np.asarray(mask).astype(bool)
    interior = ndimage.binary_erosion(binary, structure=_CROSS, border_value=0)
    ys, xs = np.nonzero(binary & ~interior)
    return np.stack([xs, ys], axis=1).astype(np.float64)


@dataclass(frozen=True)
class BoundaryDistances:
    hausdorff: float
    assd: float
    empty: bool = False


def boundary_distances(a: npt.ArrayLike, b: npt.ArrayLike) -> BoundaryDistances:
    """Hausdorff distance and average symmetric surface distance between mask boundaries, in pixels.

    Hausdorff is the exact maximum of the two directed maxima; ASSD is the mean
    of the two directed means. An empty mask gives infinite distances with
    ``empty`` set.
    """
    a, b = _pair(a, b)
    if not a.any() or not b.any():
        return BoundaryDistances(math.inf, math.inf, empty=True)
    pa, pb = boundary_pixels(a), boundary_pixels(b)
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return BoundaryDistances(
        hausdorff=float(max(d_ab.max(), d_ba.max())),
        assd=float((d_ab.mean() + d_ba.mean()) / 2),
    )


def score_landmarks(
    landmarks: npt.ArrayLike, mask: npt.ArrayLike, graph: LevelGraph, organs: Sequence[int]
) -> list[dict]:
    """Metric rows for one predicted landmark set (pixel units) against a label mask."""
    labels = np.asarray(mask)
    height, width = labels.shape
    polygons = graph.split(np.asarray(landmarks, dtype=np.float64))
    rows = []
    for organ in organs:
        predicted = hard_rasterize(polygons[organ], height, width)
        reference = labels == organ
        distances = boundary_distances(predicted, reference)
        if distances.empty:
            logger.warning(f"Organ {organ}: empty mask, surface distances are infinite")
        rows.append(
            {
                "organ": int(organ),
                "dice": dice(predicted, reference),
                "hausdorff_px": distances.hausdorff,
                "assd_px": distances.assd,
                "empty": distances.empty,
            }
        )
    return rows


@dataclass
class MetricsReport:
    """Per-sample, per-organ metrics plus per-landmark correspondence statistics.

    ``correspondence`` has one row per (organ, landmark index) with the circular
    mean and circular std of the landmark's arc-length parameter; it is empty
    when no oracle was available.
    """

    rows: pd.DataFrame
    correspondence: pd.DataFrame = field(
        default_factory=lambda: pd.DataFrame(columns=["organ", "index", "circular_mean", "circular_std"])
    )

    def correspondence_summary(self) -> dict[int, float]:
        """Population mean of the per-index circular std, per organ."""
        if self.correspondence.empty:
            return {}
        grouped = self.correspondence.groupby("organ")["circular_std"].mean()
        return {int(o): float(v) for o, v in grouped.items()}

    def summary(self) -> dict:
        finite = self.rows.replace([np.inf, -np.inf], np.nan)
        per_organ = finite.groupby("organ")[["dice", "hausdorff_px", "assd_px"]].agg(["mean", "median"])
        result = {
            str(organ): {f"{metric}_{stat}": float(per_organ.loc[organ, (metric, stat)]) for metric, stat in per_organ}
            for organ in per_organ.index
        }
        for organ, value in self.correspondence_summary().items():
            result.setdefault(str(organ), {})["correspondence_std"] = value
        return {"samples": int(self.rows["sample"].nunique()) if len(self.rows) else 0, "organs": result}

    def to_csv(self, out_dir: Path) -> Path:
        """Write metrics.csv, correspondence.csv and summary.json into ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = self.rows.copy()
        rows["correspondence"] = rows["organ"].map(self.correspondence_summary()).astype(float)
        rows.reindex(columns=METRIC_COLUMNS).to_csv(out_dir / "metrics.csv", index=False)
        self.correspondence.to_csv(out_dir / "correspondence.csv", index=False)
        path = out_dir / "summary.json"
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return out_dir / "metrics.csv"
