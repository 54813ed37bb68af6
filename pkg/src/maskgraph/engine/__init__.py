"""Optimization commands: per-mask snake fitting and population training."""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Annotated

import pandas as pd
import torch
import typer
from loguru import logger

from maskgraph import app as main_app
from maskgraph.data.dataset import (
    CONFIG_SNAPSHOT,
    PREDICTIONS_FILE,
    TOPOLOGY_FILE,
    Prediction,
    PreparedData,
    write_predictions,
)
from maskgraph.data.masks import Sample
from maskgraph.model.network import MaskHybridGNet, model_input

from .snake import snake_fit
from .trainer import train_population

app = typer.Typer(help="Fitting and training commands")

PreparedArgument = Annotated[Path, typer.Argument(help="Directory written by `prepare`.")]
SetOption = Annotated[
    list[str] | None, typer.Option("--set", help="Dotted-key override such as train.iterations=2000.")
]


def _with_iterations(overrides: list[str] | None, key: str, iters: int | None) -> list[str]:
    overrides = list(overrides or [])
    if iters is not None:
        overrides.append(f"{key}={iters}")
    return overrides


def _write_run(data: PreparedData, out: Path, predictions: list[Prediction]) -> None:
    write_predictions(predictions, out / PREDICTIONS_FILE)
    data.topology.save(out / TOPOLOGY_FILE)
    data.config.save(out / CONFIG_SNAPSHOT)


@app.command("fit")
def fit(
    ctx: typer.Context,
    prepared: PreparedArgument,
    split: Annotated[str, typer.Option(help="Split whose masks are fitted.")] = "test",
    out: Annotated[Path | None, typer.Option(help="Output directory (default: <prepared>/fit).")] = None,
    iters: Annotated[int | None, typer.Option("--iters", min=1, help="Snake iterations per mask.")] = None,
    overrides: SetOption = None,
):
    """Fit the topology directly to every mask of a split by gradient descent on the landmarks."""
    data = PreparedData.load(prepared, _with_iterations(overrides, "snake.iterations", iters))
    out = out or Path(prepared) / "fit"
    cfg = data.config
    entries = data.split_entries(split)
    samples = data.samples(split)
    threads = (ctx.obj or {}).get("threads", 1)

    def run(sample: Sample):
        return snake_fit(sample.mask, data.topology, cfg.snake, cfg.raster.sigma)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(run, samples))

    predictions = [
        Prediction(subject_id=e.subject_id, mask_path=e.mask_path, landmarks=r.landmarks)
        for e, r in zip(entries, results, strict=True)
    ]
    _write_run(data, out, predictions)
    pd.DataFrame(
        {
            "subject_id": [e.subject_id for e in entries],
            "mask_path": [e.mask_path for e in entries],
            "final_loss": [r.losses[-1] if r.losses else float("nan") for r in results],
        }
    ).to_csv(out / "fit_log.csv", index=False)
    logger.success(f"Fitted {len(predictions)} masks into {out}")


@app.command("train")
def train(
    prepared: PreparedArgument,
    out: Annotated[Path | None, typer.Option(help="Output directory (default: <prepared>/train).")] = None,
    iters: Annotated[int | None, typer.Option("--iters", min=1, help="Training iterations.")] = None,
    resume: Annotated[Path | None, typer.Option(help="Checkpoint to continue from.")] = None,
    overrides: SetOption = None,
):
    """Train the landmark network on the training split and predict the test split.

    Writes `train_log.csv`, `val_log.csv`, `last.mhgn`, `best.mhgn` and the
    test-split `landmarks.json` (from the best validation state).
    """
    data = PreparedData.load(prepared, _with_iterations(overrides, "train.iterations", iters))
    out = out or Path(prepared) / "train"
    cfg = data.config
    torch.manual_seed(cfg.seed)
    model = MaskHybridGNet(data.topology, cfg.model, cfg.inputsize)
    result = train_population(model, data.samples("train"), data.samples("val"), cfg, out, resume)
    logger.info(f"Best validation Chamfer {result.best_value:.5g} at iteration {result.best_iteration}")

    organs = data.topology.organs
    predictions = [
        Prediction(
            subject_id=entry.subject_id,
            mask_path=entry.mask_path,
            landmarks=model.predict(model_input(sample, cfg.model.input, organs)),
        )
        for entry, sample in zip(data.split_entries("test"), data.samples("test"), strict=True)
    ]
    _write_run(data, out, predictions)


main_app.add_typer(app)
