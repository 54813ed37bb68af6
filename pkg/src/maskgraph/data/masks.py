"""Label masks, images and samples.

Masks and images are stored as binary 8-bit PGM files (``P5``). A mask stores
organ class ids as raw pixel values; an image stores intensities scaled to
``maxval``.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from maskgraph.config import DatasetConfig
from maskgraph.errors import MaskFormatError, ShapeError

LabelMask = npt.NDArray[np.uint8]

_WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass(frozen=True)
class Sample:
    """One training or test example.

    Attributes:
        image: H×W float grid in [0, 1]
        mask: H×W label mask, 0 is background
        subject_id: identifier shared by all samples of one subject
        annotated_organs: organ ids annotated under this sample's protocol
    """

    image: npt.NDArray[np.float64]
    mask: LabelMask
    subject_id: str
    annotated_organs: tuple[int, ...]

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ShapeError(f"image {self.image.shape} and mask {self.mask.shape} differ in shape")

    @property
    def labels(self) -> set[int]:
        """Organ ids present in the mask."""
        return {int(v) for v in np.unique(self.mask) if v != 0}


def _read_pgm(path: Path) -> tuple[np.ndarray, int]:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as e:
        raise MaskFormatError(path, 0, "missing file") from e

    if not data.startswith(b"P5"):
        raise MaskFormatError(path, 0, "malformed header: expected P5 magic")

    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        # whitespace and comments between header fields
        while pos < len(data) and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < len(data) and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and 48 <= data[pos] <= 57:
            pos += 1
        if start == pos:
            raise MaskFormatError(path, pos, "malformed header")
        fields.append(int(data[start:pos]))
        if len(fields) == 3 and fields[2] > 255:
            raise MaskFormatError(path, start, f"unsupported bit depth (maxval {fields[2]})")

    width, height, maxval = fields
    if width == 0 or height == 0 or maxval == 0:
        raise MaskFormatError(path, pos, "malformed header")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise MaskFormatError(path, pos, "malformed header")
    pos += 1

    expected = width * height
    if len(data) - pos < expected:
        raise MaskFormatError(path, len(data), f"truncated raster: expected {expected} bytes after header")
    raster = np.frombuffer(data, dtype=np.uint8, count=expected, offset=pos)
    return raster.reshape(height, width).copy(), maxval


def load_mask(path: Path) -> LabelMask:
    """Read a label mask from an 8-bit binary PGM file.

    Args:
        path (Path): the PGM file

    Returns:
        LabelMask: raw pixel values interpreted as class ids

    Raises:
        MaskFormatError: missing file, malformed header, unsupported bit depth
            or truncated raster; the message carries path and byte offset
    """
    mask, _ = _read_pgm(path)
    return mask


def load_image(path: Path) -> npt.NDArray[np.float64]:
    """Read a grayscale PGM image as floats in [0, 1]."""
    raster, maxval = _read_pgm(path)
    return raster.astype(np.float64) / maxval


def save_mask(mask: LabelMask, path: Path) -> Path:
    """Write a label mask as canonical P5 (``P5\\n<w> <h>\\n255\\n`` + raster)."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be two-dimensional, got shape {mask.shape}")
    if mask.size and (mask.min() < 0 or mask.max() > 255):
        raise ShapeError("mask values must fit in 8 bits")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = mask.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    path.write_bytes(header + mask.astype(np.uint8).tobytes())
    return path


def save_image(image: npt.NDArray[np.float64], path: Path) -> Path:
    """Write a [0, 1] image as an 8-bit PGM (values ×255, rounded)."""
    quantized = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    return save_mask(quantized, path)


def pad_and_resize(sample: Sample, size: int) -> Sample:
    """Pad a sample to a centered square, then resize it to ``size × size``.

    The image is resampled bilinearly and the mask by nearest neighbor, both
    sampling at pixel centers, so labels can vanish but never appear.
    """
    if size <= 0:
        raise ShapeError(f"size must be positive, got {size}")
    height, width = sample.mask.shape
    if height == width == size:
        return sample

    side = max(height, width)
    top, left = (side - height) // 2, (side - width) // 2
    image = np.zeros((side, side), dtype=np.float64)
    mask = np.zeros((side, side), dtype=np.uint8)
    image[top : top + height, left : left + width] = sample.image
    mask[top : top + height, left : left + width] = sample.mask

    if side != size:
        centers = (np.arange(size) + 0.5) * side / size
        nearest = np.minimum(np.floor(centers).astype(np.intp), side - 1)
        mask = mask[np.ix_(nearest, nearest)]
        rows, cols = np.meshgrid(centers - 0.5, centers - 0.5, indexing="ij")
        image = ndimage.map_coordinates(image, [rows, cols], order=1, mode="nearest")

    return dataclasses.replace(sample, image=image, mask=mask)


def input_to_original(points: npt.ArrayLike, shape: tuple[int, int], size: int) -> npt.NDArray[np.float64]:
    """Map (x, y) points from the ``size × size`` network input back to a ``shape`` image."""
    height, width = shape
    side = max(height, width)
    offset = np.array([(side - width) // 2, (side - height) // 2], dtype=np.float64)
    return np.asarray(points, dtype=np.float64) * (side / size) - offset


def flip_horizontal(grid: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(grid[:, ::-1])


def flip_vertical(grid: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(grid[::-1, :])


def augment(sample: Sample, cfg: DatasetConfig, rng: np.random.Generator) -> Sample:
    """Apply the enabled augmentations, each with probability 0.5.

    Transforms run in a fixed order (h-flip, v-flip, rotation, transpose) and a
    random draw is consumed only for enabled ones, so the result is a pure
    function of the sample, the config and the generator state.
    """
    if cfg.rotate_max_deg < 0:
        raise ShapeError("rotate_max_deg must be non-negative")
    image, mask = sample.image, sample.mask

    if cfg.aug_flip_h and rng.random() < 0.5:
        image, mask = flip_horizontal(image), flip_horizontal(mask)
    if cfg.aug_flip_v and rng.random() < 0.5:
        image, mask = flip_vertical(image), flip_vertical(mask)
    if cfg.aug_rotate and rng.random() < 0.5:
        angle = rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg)
        image = ndimage.rotate(image, angle, reshape=False, order=1, mode="constant", cval=0.0)
        mask = ndimage.rotate(mask, angle, reshape=False, order=0, mode="constant", cval=0)
        image = np.clip(image, 0.0, 1.0)
    if cfg.aug_transpose and rng.random() < 0.5:
        image, mask = np.ascontiguousarray(image.T), np.ascontiguousarray(mask.T)

    if image is sample.image and mask is sample.mask:
        return sample
    return dataclasses.replace(sample, image=image, mask=mask)
