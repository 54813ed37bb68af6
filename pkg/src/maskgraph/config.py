"""Run configuration.

A run is configured by a single JSON (or YAML) document. The top-level keys
mirror the dataset configuration dictionary (``scale_factor``, ``resolutions``,
``organs``, ``organ_names``, ``inputsize``, ``flip_h``, ``flip_v``, ``rotate``,
``transpose``) plus ``seed``; the remaining concerns live in nested sections.

Example:
    >>> cfg = RunConfig.from_mapping({"scale_factor": 0.05, "train": {"iterations": 10}})
    >>> cfg.train.iterations
    10
"""

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import platformdirs
import yaml
from loguru import logger

from maskgraph.errors import ConfigError

DEFAULT_DELTA = math.sqrt(2) + 0.01


@dataclass(frozen=True)
class DatasetConfig:
    """Dataset-level knobs: landmark density, resolution count, organs and augmentation."""

    scale_factor: float = 0.10
    min_landmarks: int = 16
    resolution_levels: int = 3
    organ_labels: tuple[int, ...] = (1,)
    organ_names: tuple[str, ...] = ("organ",)
    input_size: int = 64
    aug_flip_h: bool = False
    aug_flip_v: bool = False
    aug_rotate: bool = False
    aug_transpose: bool = False
    rotate_max_deg: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.scale_factor <= 1:
            raise ConfigError(f"scale_factor must lie in (0, 1], got {self.scale_factor}")
        if self.min_landmarks < 3:
            raise ConfigError(f"min_landmarks must be at least 3, got {self.min_landmarks}")
        if self.resolution_levels < 1:
            raise ConfigError(f"resolutions must name at least one level, got {self.resolution_levels}")
        if len(set(self.organ_labels)) != len(self.organ_labels) or any(o <= 0 for o in self.organ_labels):
            raise ConfigError(f"organ labels must be distinct positive ids, got {list(self.organ_labels)}")
        if self.organ_names and len(self.organ_names) != len(self.organ_labels):
            raise ConfigError("organ_names must have one entry per organ")
        if self.input_size <= 0 or self.input_size % 2:
            raise ConfigError(f"inputsize must be a positive even number, got {self.input_size}")
        if self.rotate_max_deg < 0:
            raise ConfigError(f"rotate_max_deg must be non-negative, got {self.rotate_max_deg}")
        if self.seed < 0:
            raise ConfigError(f"seed must be unsigned, got {self.seed}")


@dataclass
class TopologyConfig:
    mode: str = "independent"
    delta: float = DEFAULT_DELTA


@dataclass
class RasterConfig:
    sigma: float = 1.0


@dataclass
class LossConfig:
    """Loss weights and the endpoints of their schedules."""

    lambda_c: float = 10.0
    lambda_p: float = 1.0
    lambda_k_start: float = 1e-6
    lambda_k_end: float = 1e-3
    alpha_start: float = 1e-6
    alpha_end: float = 1.0
    alpha_ramp_fraction: float = 1 / 3
    beta: float = 300.0
    gamma: float = 250.0
    decay_decades: float = 2.0
    raster: bool = True
    max_truth_points: int = 4096


@dataclass
class ModelConfig:
    """Toy network sizes. ``input`` is ``image`` or ``mask`` (shape auto-encoder)."""

    encoder_widths: tuple[int, ...] = (8, 16, 32, 64)
    latent_dim: int = 32
    cheb_order: int = 6
    cheb_layers: int = 2
    graph_width: int = 32
    leaky_slope: float = 0.2
    dual: bool = False
    input: str = "image"


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    batch_ramp_fraction: float = 0.1
    learning_rate: float = 1e-4
    val_every: int = 100
    augment: bool = False


@dataclass
class SnakeConfig:
    """Direct landmark fitting. Weights are constant over the run."""

    iterations: int = 300
    learning_rate: float = 2e-3
    final_lr_fraction: float = 0.05
    lambda_c: float = 10.0
    lambda_p: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0


_SECTIONS = {
    "topology": TopologyConfig,
    "raster": RasterConfig,
    "loss": LossConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "snake": SnakeConfig,
}


@dataclass
class RunConfig:
    """Everything one run needs, in the on-disk key layout."""

    database_path: str | None = None
    output_path: str | None = None
    scale_factor: float = 0.10
    resolutions: list[str] | int = field(default_factory=lambda: ["Full", "Half", "Quarter"])
    organs: list[str] = field(default_factory=lambda: ["1"])
    organ_names: list[str] = field(default_factory=lambda: ["organ"])
    inputsize: int = 64
    flip_h: bool = False
    flip_v: bool = False
    rotate: bool = False
    transpose: bool = False
    seed: int = 0
    min_landmarks: int = 16
    rotate_max_deg: float = 10.0
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    raster: RasterConfig = field(default_factory=RasterConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    snake: SnakeConfig = field(default_factory=SnakeConfig)

    def __post_init__(self):
        if self.topology.mode not in ("independent", "unified"):
            raise ConfigError(f"topology.mode must be 'independent' or 'unified', got {self.topology.mode!r}")
        if self.topology.delta <= 0:
            raise ConfigError("topology.delta must be positive")
        if self.raster.sigma <= 0:
            raise ConfigError("raster.sigma must be positive")
        if self.model.input not in ("image", "mask"):
            raise ConfigError(f"model.input must be 'image' or 'mask', got {self.model.input!r}")
        if self.model.dual and self.model.input == "mask":
            raise ConfigError("the auxiliary decoder is disabled in mask input mode")
        if self.model.cheb_order < 1:
            raise ConfigError("model.cheb_order must be at least 1")
        if self.train.iterations < 1 or self.snake.iterations < 1:
            raise ConfigError("iteration counts must be positive")
        _ = self.dataset  # raises ConfigError on invalid dataset keys

    @property
    def resolution_levels(self) -> int:
        if isinstance(self.resolutions, int):
            return self.resolutions
        return len(self.resolutions)

    @property
    def organ_labels(self) -> tuple[int, ...]:
        try:
            return tuple(int(o) for o in self.organs)
        except ValueError as e:
            raise ConfigError(f"organ ids must be integers: {e}") from e

    @property
    def dataset(self) -> DatasetConfig:
        return DatasetConfig(
            scale_factor=self.scale_factor,
            min_landmarks=self.min_landmarks,
            resolution_levels=self.resolution_levels,
            organ_labels=self.organ_labels,
            organ_names=tuple(self.organ_names),
            input_size=self.inputsize,
            aug_flip_h=self.flip_h,
            aug_flip_v=self.flip_v,
            aug_rotate=self.rotate,
            aug_transpose=self.transpose,
            rotate_max_deg=self.rotate_max_deg,
            seed=self.seed,
        )

    @classmethod
    def from_mapping(cls, raw: dict[str, Any] | None) -> "RunConfig":
        """Build a config from a parsed document, rejecting unknown keys."""
        raw = dict(raw or {})
        kwargs = _known_kwargs(cls, raw, prefix="")
        for name, section_cls in _SECTIONS.items():
            section = kwargs.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            kwargs[name] = section_cls(**_known_kwargs(section_cls, section, prefix=f"{name}."))
        kwargs["model"].encoder_widths = tuple(kwargs["model"].encoder_widths)
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_file(cls, path: Path, overrides: list[str] | None = None) -> "RunConfig":
        """Load a JSON or YAML config file and apply dotted-key overrides."""
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: cannot parse config: {e}") from e
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = apply_overrides(raw or {}, overrides or [])
        logger.debug(f"Loaded config from {path}")
        return cls.from_mapping(raw)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def save(self, path: Path) -> Path:
        """Write the resolved config as JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _known_kwargs(cls: type, raw: dict[str, Any], prefix: str) -> dict[str, Any]:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown config key {prefix}{unknown[0]}")
    return dict(raw)


def apply_overrides(raw: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``dotted.key=value`` overrides to a raw config mapping.

    Values are parsed with YAML scalar rules, so ``true``, ``0.5`` and ``[1, 2]``
    become a bool, a float and a list.

    Args:
        raw: parsed config document; not modified
        overrides: strings of the form ``a.b.c=value``

    Returns:
        a new mapping with the overrides applied

    Raises:
        ConfigError: if an override has no ``=`` or descends into a non-mapping
    """
    result = json.loads(json.dumps(raw))
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        value = yaml.safe_load(text) if text else ""
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping value")
        node[parts[-1]] = value
    return result


def fingerprint(payload: Any) -> str:
    """Stable SHA-256 hex digest of a JSON-serializable payload."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def default_output_root() -> Path:
    """Platform-appropriate directory for run artifacts when ``--out`` is omitted."""
    return Path(platformdirs.user_data_dir("maskgraph")) / "runs"
