"""Dataset manifests, subject-wise splits and on-disk synthetic datasets."""

import json
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger
from rich.progress import track

from maskgraph.config import RunConfig
from maskgraph.data.masks import Sample, load_image, load_mask, pad_and_resize, save_image, save_mask
from maskgraph.data.synthetic import CorrespondenceOracle
from maskgraph.errors import ConfigError, MaskGraphError
from maskgraph.topology.graph import GraphTopology

CONFIG_SNAPSHOT = "config.resolved.json"
TOPOLOGY_FILE = "topology.json"
SPLITS_FILE = "splits.json"
PREDICTIONS_FILE = "landmarks.json"
CONTOURS_DIR = "contours"

_UNSAFE = re.compile(r"[^\w.-]")


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    image_path: str
    mask_path: str
    annotated_organs: tuple[int, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "subject_id": self.subject_id,
            "image_path": self.image_path,
            "mask_path": self.mask_path,
            "annotated_organs": list(self.annotated_organs),
        }


def read_manifest(path: Path) -> list[ManifestEntry]:
    """Read a manifest: a JSON array of {subject_id, image_path, mask_path, annotated_organs}.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"manifest not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}") from e
    if not isinstance(raw, list):
        raise ConfigError(f"{path}: manifest must be a JSON array")
    entries = []
    for k, item in enumerate(raw):
        try:
            entries.append(
                ManifestEntry(
                    subject_id=str(item["subject_id"]),
                    image_path=str(path.parent / item["image_path"]),
                    mask_path=str(path.parent / item["mask_path"]),
                    annotated_organs=tuple(int(o) for o in item["annotated_organs"]),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"{path}: entry {k} is malformed ({e})") from e
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path: Path) -> Path:
    """Write a manifest with paths relative to its directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for entry in entries:
        row = entry.to_dict()
        for key in ("image_path", "mask_path"):
            p = Path(row[key])
            row[key] = str(p.relative_to(path.parent)) if p.is_absolute() and p.is_relative_to(path.parent) else str(p)
        rows.append(row)
    path.write_text(json.dumps(rows, indent=1) + "\n", encoding="utf-8")
    return path


def load_sample(entry: ManifestEntry) -> Sample:
    return Sample(
        image=load_image(Path(entry.image_path)),
        mask=load_mask(Path(entry.mask_path)),
        subject_id=entry.subject_id,
        annotated_organs=entry.annotated_organs,
    )


def load_samples(entries: Sequence[ManifestEntry]) -> list[Sample]:
    return [load_sample(e) for e in track(entries, description="Loading samples")]


def split_subjects(
    samples: Sequence[Sample],
    test_fraction: float,
    seed: int,
    val_fraction: float | None = None,
) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Partition samples into train, validation and test sets by subject.

    Subjects are shuffled with ``seed``; the test set takes
    ``round(n * test_fraction)`` subjects and the validation set
    ``round(n * val_fraction)`` (default ``test_fraction``), each at least one,
    leaving at least one subject for training.

    Raises:
        ConfigError: for a fraction outside (0, 1) or fewer than 3 subjects
    """
    val_fraction = test_fraction if val_fraction is None else val_fraction
    for name, value in (("test_fraction", test_fraction), ("val_fraction", val_fraction)):
        if not 0 < value < 1:
            raise ConfigError(f"{name} must lie in (0, 1), got {value}")
    subjects = sorted({s.subject_id for s in samples})
    if len(subjects) < 3:
        raise ConfigError(f"subject-wise splitting needs at least 3 subjects, got {len(subjects)}")

    n = len(subjects)
    n_test = max(1, round(n * test_fraction))
    n_val = max(1, round(n * val_fraction))
    if n_test + n_val > n - 1:
        raise ConfigError(f"{n} subjects cannot fill test ({n_test}), validation ({n_val}) and training")
    order = np.random.default_rng(seed).permutation(n)
    test_ids = {subjects[i] for i in order[:n_test]}
    val_ids = {subjects[i] for i in order[n_test : n_test + n_val]}

    train, val, test = [], [], []
    for s in samples:
        (test if s.subject_id in test_ids else val if s.subject_id in val_ids else train).append(s)
    logger.info(f"Split {n} subjects into {n - n_test - n_val} train, {n_val} validation, {n_test} test")
    return train, val, test


def write_population(
    population: Sequence[tuple[Sample, CorrespondenceOracle]], root: Path
) -> tuple[Path, Path]:
    """Write a synthetic population as PGM files, a manifest and the shape oracles.

    Returns:
        (manifest path, shapes path)
    """
    root = Path(root)
    entries, shapes = [], {}
    for k, (sample, oracle) in enumerate(population):
        stem = f"{sample.subject_id}_{k:05d}"
        image_path = save_image(sample.image, root / "images" / f"{stem}.pgm")
        mask_path = save_mask(sample.mask, root / "masks" / f"{stem}.pgm")
        entries.append(
            ManifestEntry(
                subject_id=sample.subject_id,
                image_path=str(image_path.relative_to(root)),
                mask_path=str(mask_path.relative_to(root)),
                annotated_organs=sample.annotated_organs,
            )
        )
        shapes[f"masks/{stem}.pgm"] = oracle.to_dict()
    manifest = write_manifest(entries, root / "manifest.json")
    shapes_path = root / "shapes.json"
    shapes_path.write_text(json.dumps(shapes, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest, shapes_path


def read_oracles(shapes_path: Path) -> dict[str, CorrespondenceOracle]:
    """Oracles keyed by absolute mask path, or empty when the dataset is not synthetic."""
    shapes_path = Path(shapes_path)
    if not shapes_path.exists():
        return {}
    raw = json.loads(shapes_path.read_text(encoding="utf-8"))
    try:
        return {str(shapes_path.parent / key): CorrespondenceOracle.from_dict(v) for key, v in raw.items()}
    except (KeyError, TypeError) as e:
        raise MaskGraphError(f"{shapes_path}: malformed shape record ({e})") from e


def write_splits(splits: dict[str, Sequence[Sample]], path: Path) -> Path:
    """Record the subject ids of every partition as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {name: sorted({s.subject_id for s in samples}) for name, samples in splits.items()}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_splits(path: Path) -> dict[str, set[str]]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"split file not found: {path}") from e
    return {name: set(ids) for name, ids in raw.items()}


@dataclass(frozen=True)
class Prediction:
    """Finest-level landmarks predicted for one sample, in network-input pixel units."""

    subject_id: str
    mask_path: str
    landmarks: np.ndarray

    def to_dict(self) -> dict[str, Any]:
        return {"subject_id": self.subject_id, "mask_path": self.mask_path, "landmarks": self.landmarks.tolist()}


def write_predictions(predictions: Sequence[Prediction], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([p.to_dict() for p in predictions], indent=1) + "\n", encoding="utf-8")
    logger.success(f"Wrote {len(predictions)} predictions to {path}")
    return path


def read_predictions(path: Path) -> list[Prediction]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"predictions not found: {path}") from e
    return [
        Prediction(
            subject_id=item["subject_id"],
            mask_path=item["mask_path"],
            landmarks=np.asarray(item["landmarks"], dtype=np.float64),
        )
        for item in raw
    ]


@dataclass
class PreparedData:
    """A directory written by ``prepare``: resolved config, topology and subject splits."""

    root: Path
    config: RunConfig
    topology: GraphTopology
    entries: list[ManifestEntry]
    splits: dict[str, set[str]]

    @classmethod
    def load(cls, root: Path, overrides: list[str] | None = None) -> "PreparedData":
        root = Path(root)
        config = RunConfig.from_file(root / CONFIG_SNAPSHOT, overrides)
        if config.database_path is None:
            raise ConfigError(f"{root / CONFIG_SNAPSHOT}: database_path is not set")
        return cls(
            root=root,
            config=config,
            topology=GraphTopology.load(root / TOPOLOGY_FILE),
            entries=read_manifest(resolve_path(config.database_path, root)),
            splits=read_splits(root / SPLITS_FILE),
        )

    def split_entries(self, split: str) -> list[ManifestEntry]:
        if split not in self.splits:
            raise ConfigError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return [e for e in self.entries if e.subject_id in self.splits[split]]

    def samples(self, split: str) -> list[Sample]:
        """Samples of one split, padded and resized to the network input size."""
        return [pad_and_resize(s, self.config.inputsize) for s in load_samples(self.split_entries(split))]


def resolve_path(path: str | Path, base: Path) -> Path:
    path = Path(path).expanduser()
    return path if path.is_absolute() else Path(base) / path


def contour_file_name(index: int, subject_id: str) -> str:
    """``0003_case-7.csv``; characters unsafe in file names become underscores."""
    stem = _UNSAFE.sub("_", subject_id)
    return f"{index:04d}_{stem}.csv"
