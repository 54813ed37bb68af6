"""Synthetic shape populations with a known correspondence oracle.

Each shape is a star-shaped radial Fourier curve

    r(θ) = base_radius + Σ_k a_k cos(k (θ - rotation) + φ_k)

traced clockwise in image coordinates (θ grows from +x towards +y). The
anatomical origin of the curve is the point at θ = rotation, so the oracle
parameter t follows the shape when it rotates. In touching mode the outline is
cut in two by the straight line through the center along the rotation
direction; organ 1 is the half with θ - rotation in [0, π].
"""

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt

from maskgraph.data.masks import Sample
from maskgraph.errors import ShapeError
from maskgraph.rasterizer import hard_rasterize, pixel_centers

MAX_HARMONICS = 5
NOISE_SIGMA = 0.1
_DENSE = 4096


@dataclass(frozen=True)
class SyntheticShapeParams:
    """Parameters of one synthetic outline, in pixels and radians.

    In touching mode both organs are halves of this one outline and share its
    coefficients.
    """

    fourier_coeffs: tuple[tuple[float, float], ...]
    center: tuple[float, float]
    base_radius: float
    rotation: float

    def __post_init__(self):
        if len(self.fourier_coeffs) > MAX_HARMONICS:
            raise ShapeError(f"at most {MAX_HARMONICS} harmonics are supported, got {len(self.fourier_coeffs)}")
        theta = np.linspace(0.0, 2 * np.pi, _DENSE, endpoint=False)
        if self.radius(theta).min() <= 0:
            raise ShapeError("radial Fourier curve is not simple: its radius reaches zero")

    def radius(self, theta: npt.ArrayLike) -> npt.NDArray[np.float64]:
        theta = np.asarray(theta, dtype=np.float64)
        r = np.full(theta.shape, float(self.base_radius))
        for k, (amplitude, phase) in enumerate(self.fourier_coeffs, start=1):
            r += amplitude * np.cos(k * (theta - self.rotation) + phase)
        return r

    def point(self, theta: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Curve points (..., 2) at angles ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        r = self.radius(theta)
        return np.stack([self.center[0] + r * np.cos(theta), self.center[1] + r * np.sin(theta)], axis=-1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "fourier_coeffs": [list(c) for c in self.fourier_coeffs],
            "center": list(self.center),
            "base_radius": self.base_radius,
            "rotation": self.rotation,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "SyntheticShapeParams":
        return cls(
            fourier_coeffs=tuple((float(a), float(p)) for a, p in raw["fourier_coeffs"]),
            center=(float(raw["center"][0]), float(raw["center"][1])),
            base_radius=float(raw["base_radius"]),
            rotation=float(raw["rotation"]),
        )


@dataclass(frozen=True)
class ShapeDistribution:
    """Population model around a template shape.

    Lengths are fractions of the image side; harmonic amplitudes are fractions
    of the base radius.
    """

    base_radius: float = 0.28
    radius_jitter: float = 0.03
    center_jitter: float = 0.04
    template: tuple[tuple[float, float], ...] = ((0.0, 0.0), (0.14, 0.0), (0.07, 1.2), (0.035, 2.1))
    amplitude_jitter: float = 0.02
    phase_jitter: float = 0.15
    rotation_max: float = math.radians(20)

    def sample(self, rng: np.random.Generator, size: int) -> SyntheticShapeParams:
        radius = size * (self.base_radius + self.radius_jitter * rng.uniform(-1, 1))
        center = (
            size / 2 + size * self.center_jitter * rng.uniform(-1, 1),
            size / 2 + size * self.center_jitter * rng.uniform(-1, 1),
        )
        coeffs = []
        for amplitude, phase in self.template:
            a = max(amplitude + self.amplitude_jitter * rng.uniform(-1, 1), 0.0)
            coeffs.append((radius * a, phase + self.phase_jitter * rng.standard_normal()))
        rotation = self.rotation_max * rng.uniform(-1, 1)
        return SyntheticShapeParams(
            fourier_coeffs=tuple(coeffs), center=center, base_radius=radius, rotation=rotation
        )


class ShapeOracle:
    """Arc-length parameterization of one organ's true boundary.

    ``oracle(t)`` maps normalized arc length ``t ∈ [0, 1)`` to boundary points and
    :meth:`project` maps points back to ``t``.
    """

    def __init__(self, params: SyntheticShapeParams, organ: int = 1, touching: bool = False, samples: int = _DENSE):
        self.params = params
        self.organ = organ
        self.touching = touching
        phi = params.rotation
        if not touching:
            theta = phi + np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
        elif organ == 1:
            theta = phi + np.linspace(0.0, np.pi, samples // 2 + 1)
        elif organ == 2:
            theta = phi + np.pi + np.linspace(0.0, np.pi, samples // 2 + 1)
        else:
            raise ShapeError(f"touching populations have organs 1 and 2, not {organ}")
        # closing segment (the chord in touching mode) is implicit
        self.polygon = params.point(theta)
        closed = np.vstack([self.polygon, self.polygon[:1]])
        steps = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        self._arc = np.concatenate([[0.0], np.cumsum(steps)])
        self._closed = closed

    @property
    def length(self) -> float:
        return float(self._arc[-1])

    def __call__(self, t: npt.ArrayLike) -> npt.NDArray[np.float64]:
        s = (np.asarray(t, dtype=np.float64) % 1.0) * self.length
        x = np.interp(s, self._arc, self._closed[:, 0])
        y = np.interp(s, self._arc, self._closed[:, 1])
        return np.stack([x, y], axis=-1)

    def project(self, points: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Normalized arc-length parameter of the closest boundary point.

        Equidistant arcs resolve to the lowest parameter.
        """
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        a, b = self._closed[:-1], self._closed[1:]
        d = b - a
        len2 = np.einsum("ij,ij->i", d, d)
        ap = p[:, None, :] - a[None]
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(len2 > 0, np.einsum("pij,ij->pi", ap, d) / len2, 0.0)
        u = np.clip(u, 0.0, 1.0)
        diff = ap - u[..., None] * d[None]
        dist = np.einsum("pij,pij->pi", diff, diff)
        seg = np.argmin(dist, axis=1)
        rows = np.arange(len(p))
        s = self._arc[seg] + u[rows, seg] * np.sqrt(len2[seg])
        return (s / self.length) % 1.0


@dataclass(frozen=True)
class CorrespondenceOracle:
    """True boundary parameterization of every organ of one synthetic sample."""

    params: SyntheticShapeParams
    touching: bool = False
    curves: dict[int, ShapeOracle] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        organs = (1, 2) if self.touching else (1,)
        for organ in organs:
            self.curves[organ] = ShapeOracle(self.params, organ=organ, touching=self.touching)

    def __call__(self, t: npt.ArrayLike, organ: int = 1) -> npt.NDArray[np.float64]:
        return self.curves[organ](t)

    def project(self, points: npt.ArrayLike, organ: int = 1) -> npt.NDArray[np.float64]:
        return self.curves[organ].project(points)

    def to_dict(self) -> dict[str, Any]:
        return {"params": self.params.to_dict(), "touching": self.touching}

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "CorrespondenceOracle":
        return cls(params=SyntheticShapeParams.from_dict(raw["params"]), touching=bool(raw["touching"]))


def render_mask(params: SyntheticShapeParams, size: int, touching: bool = False) -> npt.NDArray[np.uint8]:
    """Label mask of a synthetic outline (organ 1, or organs 1 and 2 when touching)."""
    outline = params.point(np.linspace(0.0, 2 * np.pi, _DENSE, endpoint=False))
    inside = hard_rasterize(outline, size, size)
    mask = np.zeros((size, size), dtype=np.uint8)
    if not touching:
        mask[inside] = 1
        return mask
    centers = pixel_centers(size, size)
    dx = centers[:, 0] - params.center[0]
    dy = centers[:, 1] - params.center[1]
    side = (np.cos(params.rotation) * dy - np.sin(params.rotation) * dx).reshape(size, size)
    mask[inside & (side >= 0)] = 1
    mask[inside & (side < 0)] = 2
    return mask


_INTENSITY = {1: 0.6, 2: 0.85}


def render_image(mask: npt.NDArray[np.uint8], rng: np.random.Generator) -> npt.NDArray[np.float64]:
    """Organ intensities plus Gaussian noise (σ = 0.1), clipped to [0, 1]."""
    image = np.zeros(mask.shape, dtype=np.float64)
    for label, value in _INTENSITY.items():
        image[mask == label] = value
    return np.clip(image + rng.normal(0.0, NOISE_SIGMA, size=mask.shape), 0.0, 1.0)


def gen_synthetic_population(
    n: int,
    distribution: ShapeDistribution,
    size: int,
    touching: bool,
    rng: np.random.Generator,
    per_subject: int = 1,
    drop_fraction: float = 0.0,
    drop_organ: int = 2,
) -> list[tuple[Sample, CorrespondenceOracle]]:
    """Render a synthetic population.

    Args:
        n: number of subjects
        distribution: distribution the shape parameters are drawn from
        size: image side in pixels
        touching: two organs sharing a straight interface instead of one organ
        rng: the only source of randomness
        per_subject: jittered renderings per subject, all sharing its subject id
        drop_fraction: fraction of samples whose ``drop_organ`` annotation is removed
        drop_organ: organ removed from those samples' masks and annotations

    Returns:
        list of (sample, oracle) pairs

    Raises:
        ShapeError: if ``n < 1`` or a drawn curve is not simple
    """
    if n < 1:
        raise ShapeError(f"population size must be at least 1, got {n}")
    organs = (1, 2) if touching else (1,)
    population = []
    for s in range(n):
        base = distribution.sample(rng, size)
        for v in range(per_subject):
            params = base
            if v > 0:
                params = SyntheticShapeParams(
                    fourier_coeffs=base.fourier_coeffs,
                    center=(base.center[0] + rng.normal(0.0, 1.0), base.center[1] + rng.normal(0.0, 1.0)),
                    base_radius=base.base_radius,
                    rotation=base.rotation + rng.normal(0.0, 0.03),
                )
            mask = render_mask(params, size, touching)
            image = render_image(mask, rng)
            sample = Sample(image=image, mask=mask, subject_id=f"subj-{s:04d}", annotated_organs=organs)
            population.append((sample, CorrespondenceOracle(params=params, touching=touching)))

    if drop_fraction > 0:
        if drop_organ not in organs:
            raise ShapeError(f"cannot drop organ {drop_organ}: population has organs {list(organs)}")
        count = round(drop_fraction * len(population))
        for k in sorted(rng.permutation(len(population))[:count].tolist()):
            sample, oracle = population[k]
            mask = sample.mask.copy()
            mask[mask == drop_organ] = 0
            kept = tuple(o for o in sample.annotated_organs if o != drop_organ)
            population[k] = (Sample(sample.image, mask, sample.subject_id, kept), oracle)
    return population
