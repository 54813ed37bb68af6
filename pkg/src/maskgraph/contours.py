"""Boundary contours of organ masks.

Foreground is 8-connected and background 4-connected. Contours are external
boundaries traced with the Moore neighborhood, without any simplification.
A trace ends when its first move from the start pixel repeats, so pixels
the boundary passes twice (spurs, diagonal bridges) appear twice.
"""

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
from loguru import logger
from scipy import ndimage

from maskgraph.errors import ContourError

# Moore neighborhood as (dy, dx), clockwise in image coordinates starting west
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Contour:
    """Ordered closed boundary of one organ.

    Attributes:
        points: (L, 2) integer pixel coordinates (x, y), clockwise, starting at
            the topmost-then-leftmost boundary pixel
        organ_label: organ id
        closed: always True; the successor of the last point is the first
    """

    points: npt.NDArray[np.int64]
    organ_label: int
    closed: bool = True

    def __len__(self) -> int:
        return len(self.points)

    def centers(self) -> npt.NDArray[np.float64]:
        """Pixel-center coordinates (x + 0.5, y + 0.5)."""
        return self.points.astype(np.float64) + 0.5

    def normalized(self, side: int) -> npt.NDArray[np.float64]:
        """Pixel centers divided by the longer image side."""
        return self.centers() / side


def largest_component(mask: npt.ArrayLike) -> npt.NDArray[np.bool_]:
    """Keep the largest 8-connected foreground component.

    Components are numbered in raster order of their first pixel, so among
    equally large components the raster-first one wins.
    """
    binary = np.asarray(mask).astype(bool)
    labels, count = ndimage.label(binary, structure=_EIGHT)
    if count <= 1:
        return binary.copy()
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(np.argmax(sizes))


def trace_boundary(mask: npt.ArrayLike, organ_label: int = 1) -> Contour:
    """Trace the external boundary of a single 8-connected component.

    Args:
        mask: binary grid with one foreground component
        organ_label: id recorded on the returned contour

    Returns:
        Contour: every boundary pixel in clockwise order; a single pixel gives a
            one-point contour

    Raises:
        ContourError: if the mask is empty
    """
    binary = np.asarray(mask).astype(bool)
    if not binary.any():
        raise ContourError("cannot trace the boundary of an empty mask")
    grid = np.pad(binary, 1, constant_values=False)

    ys, xs = np.nonzero(grid)
    start = (int(ys[0]), int(xs[0]))

    # west of the raster-first pixel is background
    points: list[tuple[int, int]] = []
    current, back = start, (start[0], start[1] - 1)
    first_move = None
    limit = 8 * int(binary.sum()) + 8
    for _ in range(limit):
        k = _MOORE.index((back[0] - current[0], back[1] - current[1]))
        for i in range(1, 9):
            dy, dx = _MOORE[(k + i) % 8]
            candidate = (current[0] + dy, current[1] + dx)
            if grid[candidate]:
                py, px = _MOORE[(k + i - 1) % 8]
                break
        else:
            # isolated pixel
            points.append(start)
            break
        if first_move is None:
            first_move = (current, candidate)
        elif (current, candidate) == first_move:
            break
        points.append(current)
        back = (current[0] + py, current[1] + px)
        current = candidate
    else:
        raise ContourError("boundary tracing did not close")

    coords = np.array([(x - 1, y - 1) for y, x in points], dtype=np.int64)
    return Contour(points=coords, organ_label=int(organ_label))


def extract_organ_contours(mask: npt.ArrayLike, organs: Iterable[int]) -> dict[int, Contour]:
    """Contours of every requested organ present in a label mask.

    Each organ is binarized, reduced to its largest component and traced.
    Organs absent from the mask are left out of the result.
    """
    labels = np.asarray(mask)
    result = {}
    for organ in organs:
        binary = labels == organ
        if not binary.any():
            logger.debug(f"Organ {organ} absent from mask")
            continue
        result[int(organ)] = trace_boundary(largest_component(binary), organ_label=int(organ))
    return result


def contour_length_stats(
    dataset_contours: Sequence[Mapping[int, Contour]], organs: Iterable[int] | None = None
) -> dict[int, float]:
    """Mean contour length per organ over the samples that contain it.

    Args:
        dataset_contours: one organ → contour map per training sample
        organs: organs to report; defaults to every organ seen

    Returns:
        dict[int, float]: organ id → mean length

    Raises:
        ContourError: if a requested organ never occurs
    """
    totals: dict[int, int] = {}
    counts: dict[int, int] = {}
    for contours in dataset_contours:
        for organ, contour in contours.items():
            totals[organ] = totals.get(organ, 0) + len(contour)
            counts[organ] = counts.get(organ, 0) + 1
    wanted = sorted(counts) if organs is None else list(organs)
    missing = [o for o in wanted if o not in counts]
    if missing:
        raise ContourError(f"organ {missing[0]} never observed in the training contours")
    return {organ: totals[organ] / counts[organ] for organ in wanted}


def contours_to_frame(contours: Mapping[int, Contour]) -> pd.DataFrame:
    """One row per point with columns organ, index, x, y."""
    frames = [
        pd.DataFrame(
            {
                "organ": contour.organ_label,
                "index": np.arange(len(contour)),
                "x": contour.points[:, 0],
                "y": contour.points[:, 1],
            }
        )
        for contour in contours.values()
    ]
    if not frames:
        return pd.DataFrame(columns=["organ", "index", "x", "y"])
    return pd.concat(frames, ignore_index=True)


def write_contours_csv(contours: Mapping[int, Contour], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    contours_to_frame(contours).to_csv(path, index=False)
    return path


def read_contours_csv(path: Path) -> dict[int, Contour]:
    """Read contours written by :func:`write_contours_csv`."""
    df = pd.read_csv(path)
    missing = {"organ", "index", "x", "y"} - set(df.columns)
    if missing:
        raise ContourError(f"{path}: missing columns {sorted(missing)}")
    result = {}
    for organ, group in df.groupby("organ", sort=False):
        group = group.sort_values("index")
        points = group[["x", "y"]].to_numpy(dtype=np.int64)
        result[int(organ)] = Contour(points=points, organ_label=int(organ))
    return result
