"""Evaluation commands: metrics reports and atlas drawings."""

from pathlib import Path
from typing import Annotated

import numpy as np
import pandas as pd
import typer
from loguru import logger
from rich.console import Console
from rich.progress import track
from rich.table import Table

from maskgraph import app as main_app
from maskgraph.config import RunConfig
from maskgraph.data.dataset import (
    CONFIG_SNAPSHOT,
    PREDICTIONS_FILE,
    TOPOLOGY_FILE,
    load_sample,
    read_manifest,
    read_oracles,
    read_predictions,
    resolve_path,
)
from maskgraph.data.masks import input_to_original, pad_and_resize
from maskgraph.engine.snake import snap_landmarks
from maskgraph.errors import ConfigError
from maskgraph.topology.graph import GraphTopology

from .atlas import export_atlas
from .correspondence import correspondence_consistency
from .metrics import MetricsReport, score_landmarks

app = typer.Typer(help="Evaluation commands")

RunArgument = Annotated[Path, typer.Argument(help="Directory written by `fit` or `train`.")]


def _print_summary(report: MetricsReport) -> None:
    table = Table(title="Evaluation summary")
    for column in ("organ", "dice", "hausdorff_px", "assd_px", "correspondence"):
        table.add_column(column, justify="right")
    correspondence = report.correspondence_summary()
    finite = report.rows.replace([np.inf, -np.inf], np.nan)
    for organ, group in finite.groupby("organ"):
        value = correspondence.get(int(organ))
        table.add_row(
            str(organ),
            f"{group['dice'].mean():.4f}",
            f"{group['hausdorff_px'].mean():.3f}",
            f"{group['assd_px'].mean():.3f}",
            "-" if value is None else f"{value:.4f}",
        )
    Console(stderr=True).print(table)


@app.command("eval")
def evaluate(
    run: RunArgument,
    out: Annotated[Path | None, typer.Option(help="Report directory (default: <run>/eval).")] = None,
    snap: Annotated[bool, typer.Option(help="Snap landmarks to the mask boundary before scoring.")] = False,
):
    """Score predicted landmarks against their masks.

    Writes `metrics.csv` (dice, hausdorff_px, assd_px and correspondence per
    sample and organ), `correspondence.csv` (per landmark index, synthetic data
    only) and `summary.json`.
    """
    run = Path(run)
    cfg = RunConfig.from_file(run / CONFIG_SNAPSHOT)
    if cfg.database_path is None:
        raise ConfigError(f"{run / CONFIG_SNAPSHOT}: database_path is not set")
    topology = GraphTopology.load(run / TOPOLOGY_FILE)
    graph = topology.levels[0]
    predictions = read_predictions(run / PREDICTIONS_FILE)
    manifest = resolve_path(cfg.database_path, run)
    entries = {e.mask_path: e for e in read_manifest(manifest)}
    oracles = read_oracles(manifest.parent / "shapes.json")

    rows = []
    curves: dict[int, tuple[list, list]] = {}
    for k, prediction in enumerate(track(predictions, description="Scoring")):
        entry = entries.get(prediction.mask_path)
        if entry is None:
            raise ConfigError(f"prediction for {prediction.mask_path} has no manifest entry")
        raw = load_sample(entry)
        sample = pad_and_resize(raw, cfg.inputsize)
        landmarks = prediction.landmarks
        if snap:
            landmarks = snap_landmarks(landmarks, sample.mask, graph)
        organs = [o for o in topology.organs if o in entry.annotated_organs]
        for row in score_landmarks(landmarks, sample.mask, graph, organs):
            rows.append({"sample": k, "subject_id": entry.subject_id, **row})

        oracle = oracles.get(entry.mask_path)
        if oracle is not None:
            polygons = graph.split(input_to_original(landmarks, raw.mask.shape, cfg.inputsize))
            for organ in topology.organs:
                if organ in oracle.curves:
                    points, owners = curves.setdefault(organ, ([], []))
                    points.append(polygons[organ])
                    owners.append(oracle)

    frames = [correspondence_consistency(p, o, organ).to_frame(organ) for organ, (p, o) in curves.items()]
    report = MetricsReport(rows=pd.DataFrame(rows))
    if frames:
        report.correspondence = pd.concat(frames, ignore_index=True)
    else:
        logger.info("No shape oracle found; correspondence is not reported")
    path = report.to_csv(out or run / "eval")
    _print_summary(report)
    logger.success(f"Wrote metrics for {len(predictions)} predictions to {path}")


@app.command("export-atlas")
def export_atlas_command(
    run: RunArgument,
    out: Annotated[Path | None, typer.Option(help="SVG file (default: <run>/atlas_<index>.svg).")] = None,
    index: Annotated[int, typer.Option(min=0, help="Prediction to draw.")] = 0,
    atlas: Annotated[
        bool, typer.Option(help="Draw the unified topology's atlas positions instead of a prediction.")
    ] = False,
    level: Annotated[int, typer.Option(min=0, help="Resolution level for --atlas.")] = 0,
):
    """Draw a landmark graph over its mask as SVG: nodes colored by index, shared nodes highlighted."""
    run = Path(run)
    cfg = RunConfig.from_file(run / CONFIG_SNAPSHOT)
    topology = GraphTopology.load(run / TOPOLOGY_FILE)
    size = (cfg.inputsize, cfg.inputsize)

    if atlas:
        if level >= topology.resolution_levels:
            raise typer.BadParameter(f"--level must be below {topology.resolution_levels}")
        graph = topology.levels[level]
        if graph.positions is None:
            raise ConfigError("only unified topologies carry atlas positions")
        path = export_atlas(graph.positions, graph, out or run / f"atlas_level{level}.svg", size=size)
    else:
        predictions = read_predictions(run / PREDICTIONS_FILE)
        if index >= len(predictions):
            raise typer.BadParameter(f"--index must be below {len(predictions)}")
        prediction = predictions[index]
        entries = {e.mask_path: e for e in read_manifest(resolve_path(cfg.database_path or "", run))}
        mask = None
        if prediction.mask_path in entries:
            mask = pad_and_resize(load_sample(entries[prediction.mask_path]), cfg.inputsize).mask
        path = export_atlas(prediction.landmarks, topology.levels[0], out or run / f"atlas_{index}.svg", mask, size)
    logger.success(f"Wrote {path}")


main_app.add_typer(app)
