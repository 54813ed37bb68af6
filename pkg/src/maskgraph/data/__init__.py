"""Data commands: synthetic dataset generation and dataset preparation."""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Annotated

import numpy as np
import pandas as pd
import typer
from loguru import logger

from maskgraph import app as main_app
from maskgraph.config import RunConfig, apply_overrides, default_output_root
from maskgraph.contours import contour_length_stats, extract_organ_contours, write_contours_csv
from maskgraph.errors import ConfigError, ContourError
from maskgraph.topology import build_independent, build_unified, landmark_count

from .dataset import (
    CONFIG_SNAPSHOT,
    CONTOURS_DIR,
    SPLITS_FILE,
    TOPOLOGY_FILE,
    contour_file_name,
    load_samples,
    read_manifest,
    resolve_path,
    split_subjects,
    write_population,
    write_splits,
)
from .masks import Sample, pad_and_resize
from .synthetic import ShapeDistribution, gen_synthetic_population

app = typer.Typer(help="Dataset commands")

ConfigOption = Annotated[Path | None, typer.Option("--config", help="JSON or YAML run configuration.")]
SetOption = Annotated[
    list[str] | None, typer.Option("--set", help="Dotted-key override such as train.iterations=2000.")
]


def load_config(config: Path | None, overrides: list[str] | None, defaults: dict | None = None) -> RunConfig:
    """Config file (or ``defaults``) with overrides applied; ``--set`` always wins."""
    if config is not None:
        return RunConfig.from_file(config, overrides)
    return RunConfig.from_mapping(apply_overrides(defaults or {}, overrides or []))


@app.command("gen-synth")
def gen_synth(
    n: Annotated[int, typer.Option("--n", min=1, help="Number of subjects.")] = 200,
    size: Annotated[int, typer.Option(min=8, help="Image side in pixels.")] = 64,
    touching: Annotated[
        bool, typer.Option("--touching/--single", help="Two organs sharing an interface, or one organ.")
    ] = False,
    seed: Annotated[int, typer.Option(min=0, help="Random seed.")] = 0,
    per_subject: Annotated[int, typer.Option(min=1, help="Renderings per subject.")] = 1,
    drop_fraction: Annotated[
        float, typer.Option(min=0.0, max=1.0, help="Fraction of samples without the dropped organ's annotation.")
    ] = 0.0,
    drop_organ: Annotated[int, typer.Option(help="Organ removed from those annotations.")] = 2,
    out: Annotated[Path | None, typer.Option(help="Output directory.")] = None,
    config: ConfigOption = None,
    overrides: SetOption = None,
):
    """Generate a synthetic population of radial Fourier shapes with a known correspondence oracle.

    Writes `images/`, `masks/`, `manifest.json`, `shapes.json` and a
    `config.resolved.json` that `prepare` can use directly.
    """
    if drop_fraction > 0 and not touching:
        raise typer.BadParameter("--drop-fraction needs --touching (a single-organ population has nothing to drop)")
    out = out or default_output_root() / "synthetic"
    organs = ["1", "2"] if touching else ["1"]
    names = ["upper", "lower"] if touching else ["organ"]
    defaults = {"organs": organs, "organ_names": names, "inputsize": size, "seed": seed}
    cfg = load_config(config, overrides, defaults)

    rng = np.random.default_rng(seed)
    population = gen_synthetic_population(
        n,
        ShapeDistribution(),
        size,
        touching,
        rng,
        per_subject=per_subject,
        drop_fraction=drop_fraction,
        drop_organ=drop_organ,
    )
    manifest, _ = write_population(population, out)
    raw = cfg.to_dict()
    raw.update({"database_path": manifest.name, "output_path": None})
    RunConfig.from_mapping(raw).save(out / CONFIG_SNAPSHOT)
    logger.success(f"Wrote {len(population)} synthetic samples to {out}")


def _training_contours(samples: list[Sample], organs: tuple[int, ...], threads: int) -> list[dict]:
    def extract(sample: Sample) -> dict:
        wanted = [o for o in organs if o in sample.annotated_organs]
        return extract_organ_contours(sample.mask, wanted)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(extract, samples))


@app.command("prepare")
def prepare(
    ctx: typer.Context,
    config: Annotated[Path, typer.Option("--config", help="Run configuration naming the dataset manifest.")],
    overrides: SetOption = None,
    out: Annotated[
        Path | None, typer.Option(help="Output directory (default: output_path or a user data dir).")
    ] = None,
    test_fraction: Annotated[float, typer.Option(min=0.0, max=1.0, help="Fraction of subjects held out.")] = 0.2,
    val_fraction: Annotated[
        float | None, typer.Option(min=0.0, max=1.0, help="Validation fraction (default: test fraction).")
    ] = None,
):
    """Split subjects, extract training contours, compute landmark counts and build the topology.

    Writes `splits.json`, one `contours/<index>_<subject>.csv` per training
    sample, `contour_stats.csv`, `topology.json` and `config.resolved.json`.
    """
    cfg = RunConfig.from_file(config, overrides)
    if cfg.database_path is None:
        raise ConfigError("database_path is not set")
    manifest = resolve_path(cfg.database_path, config.parent).resolve()
    out = out or (Path(cfg.output_path) if cfg.output_path else default_output_root() / "prepared")
    threads = (ctx.obj or {}).get("threads", 1)

    samples = [pad_and_resize(s, cfg.inputsize) for s in load_samples(read_manifest(manifest))]
    train, val, test = split_subjects(samples, test_fraction, cfg.seed, val_fraction)
    write_splits({"train": train, "val": val, "test": test}, out / SPLITS_FILE)

    organs = cfg.organ_labels
    contours = _training_contours(train, organs, threads)
    if not any(contours):
        raise ContourError("no training sample contains any configured organ")
    for k, (sample, sample_contours) in enumerate(zip(train, contours, strict=True)):
        if sample_contours:
            write_contours_csv(sample_contours, out / CONTOURS_DIR / contour_file_name(k, sample.subject_id))

    stats = contour_length_stats(contours, organs)
    counts = {o: landmark_count(stats[o], cfg.scale_factor, cfg.min_landmarks) for o in organs}
    pd.DataFrame(
        {"organ": list(organs), "mean_length": [stats[o] for o in organs], "landmarks": [counts[o] for o in organs]}
    ).to_csv(out / "contour_stats.csv", index=False)
    logger.info(f"Landmark counts per organ: {counts}")

    if cfg.topology.mode == "unified":
        atlas = next((c for c in contours if all(o in c for o in organs)), None)
        if atlas is None:
            raise ContourError(f"no training sample shows all organs {list(organs)} for the unified atlas")
        topology = build_unified({o: atlas[o] for o in organs}, cfg.topology.delta, counts, cfg.resolution_levels)
    else:
        topology = build_independent(counts, cfg.resolution_levels)
    topology.save(out / TOPOLOGY_FILE)

    raw = cfg.to_dict()
    raw.update({"database_path": str(manifest), "output_path": str(out)})
    RunConfig.from_mapping(raw).save(out / CONFIG_SNAPSHOT)
    logger.success(f"Prepared {len(samples)} samples in {out} ({topology.num_nodes(0)} landmarks)")


main_app.add_typer(app)
