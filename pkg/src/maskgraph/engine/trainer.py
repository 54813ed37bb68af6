"""Population training of the landmark network."""

import copy
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from loguru import logger

from maskgraph.config import RunConfig, TrainConfig
from maskgraph.data.masks import Sample, augment
from maskgraph.engine.optim import OptState, adam_step
from maskgraph.engine.schedule import schedule_weights
from maskgraph.engine.snake import boundary_points
from maskgraph.errors import ConfigError, ShapeError, TrainingDivergedError
from maskgraph.losses import (
    LossBundle,
    LossParts,
    LossWeights,
    chamfer_loss,
    edge_regularizers,
    kl_loss,
    pixel_loss,
    total_loss,
)
from maskgraph.model.checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from maskgraph.model.network import MaskHybridGNet, ModelOutput, model_input
from maskgraph.rasterizer import soft_rasterize
from maskgraph.topology.graph import GraphTopology

LAST_CHECKPOINT = "last.mhgn"
BEST_CHECKPOINT = "best.mhgn"


@dataclass
class TrainingTarget:
    """Network input and supervision of one sample.

    ``truth`` holds normalized boundary points and ``masks`` binary masks, both
    only for organs that are annotated and present.
    """

    input: torch.Tensor
    truth: dict[int, torch.Tensor]
    masks: dict[int, torch.Tensor]

    @property
    def annotated(self) -> tuple[int, ...]:
        return tuple(self.truth)


def _subsample(points: np.ndarray, limit: int) -> np.ndarray:
    if len(points) <= limit:
        return points
    return points[np.linspace(0, len(points), limit, endpoint=False).astype(np.intp)]


def make_target(sample: Sample, organs: Sequence[int], mode: str = "image", max_points: int = 4096) -> TrainingTarget:
    side = max(sample.mask.shape)
    annotated = [o for o in organs if o in sample.annotated_organs]
    points = boundary_points(sample.mask, annotated)
    return TrainingTarget(
        input=torch.as_tensor(model_input(sample, mode, organs), dtype=torch.float64)[None],
        truth={o: torch.as_tensor(_subsample(p, max_points) / side) for o, p in points.items()},
        masks={o: torch.as_tensor((sample.mask == o).astype(np.float64)) for o in points},
    )


def batch_size_at(iteration: int, total: int, cfg: TrainConfig) -> int:
    """Batch size 1 during the first ``batch_ramp_fraction`` of the run, then the configured size."""
    return 1 if iteration < cfg.batch_ramp_fraction * total else cfg.batch_size


def batch_loss(
    output: ModelOutput,
    targets: Sequence[TrainingTarget],
    topology: GraphTopology,
    weights: LossWeights,
    sigma: float = 1.0,
    raster: bool = True,
) -> LossBundle:
    """Loss of one forward pass.

    Chamfer is summed over all levels with equal weights against the same
    boundary points. The pixel loss uses the finest level's soft raster (when
    ``raster``) and the auxiliary masks (when present). Chamfer and pixel terms
    are averaged over the batch; edge terms cover every organ.
    """
    size = targets[0].input.shape[-1]
    chamfer = torch.zeros((), dtype=torch.float64)
    pixel = torch.zeros((), dtype=torch.float64)
    for b, target in enumerate(targets):
        for level, coords in enumerate(output.landmarks):
            chamfer = chamfer + chamfer_loss(topology.levels[level].split(coords[b]), target.truth, target.annotated)
        if raster:
            polygons = topology.levels[0].split(output.finest[b])
            soft = soft_rasterize({o: polygons[o] * size for o in target.annotated}, size, size, sigma)
            pixel = pixel + pixel_loss(soft, target.masks, target.annotated)
        if output.aux is not None:
            aux = {o: output.aux[b, topology.organ_index(o)] for o in target.annotated}
            pixel = pixel + pixel_loss(aux, target.masks, target.annotated)
    parts = LossParts(
        chamfer=chamfer / len(targets),
        pixel=pixel / len(targets),
        kld=kl_loss(output.mu, output.log_var),
        edges=edge_regularizers(output.finest, topology.edge_tensor(0)),
    )
    return total_loss(parts, weights)


@torch.no_grad()
def validation_chamfer(model: MaskHybridGNet, targets: Sequence[TrainingTarget]) -> float:
    """Mean finest-level Chamfer over ``targets`` at the posterior mean."""
    was_training = model.training
    model.eval()
    finest = model(torch.stack([t.input for t in targets])).finest
    model.train(was_training)
    graph = model.topology.levels[0]
    values = [float(chamfer_loss(graph.split(finest[b]), t.truth, t.annotated)) for b, t in enumerate(targets)]
    return float(np.mean(values))


@dataclass
class TrainResult:
    best_iteration: int | None
    best_value: float
    last_iteration: int
    train_log: pd.DataFrame
    val_log: pd.DataFrame
    best_state: dict[str, torch.Tensor] = field(default_factory=dict, repr=False)


def _state_copy(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train_population(
    model: MaskHybridGNet,
    train: Sequence[Sample],
    val: Sequence[Sample],
    config: RunConfig,
    out_dir: Path | None = None,
    resume: Path | None = None,
    stop_at: int | None = None,
) -> TrainResult:
    """Train ``model`` on a population; the best validation state is loaded into it on return.

    Each iteration draws a batch without replacement from the numpy generator
    seeded with ``config.seed``, draws the reparameterization noise from a torch
    generator with the same seed, and takes one Adam step on the scheduled
    loss. Every ``train.val_every`` iterations (and at the end) the validation
    Chamfer is recorded and the last state checkpointed.

    Args:
        model: network built on the population's topology
        train: training samples, already at the network input size
        val: validation samples; the training batch is scored when empty
        config: run configuration
        out_dir: where ``train_log.csv``, ``val_log.csv`` and checkpoints go
        resume: checkpoint to continue from
        stop_at: stop after this many iterations as if interrupted

    Raises:
        ConfigError: for an empty training set
        ShapeError: for samples not at the input size
        TrainingDivergedError: on a non-finite loss or gradient
    """
    if not train:
        raise ConfigError("training set is empty")
    size = model.input_size
    for s in [*train, *val]:
        if s.mask.shape != (size, size):
            raise ShapeError(f"sample {s.subject_id} is {s.mask.shape}, expected ({size}, {size})")

    cfg = config.train
    total = cfg.iterations
    topology = model.topology
    organs, mode = topology.organs, config.model.input
    max_points = config.loss.max_truth_points
    dataset_cfg = config.dataset
    rng = np.random.default_rng(config.seed)
    noise = torch.Generator().manual_seed(config.seed)
    opt = OptState.create(model.named_parameters(), lr=cfg.learning_rate)
    config_hash = model.config_hash()

    start, best_value, best_iteration, best_state = 0, math.inf, None, {}
    records: list[dict] = []
    val_records: list[dict] = []
    if resume is not None:
        state = load_checkpoint(resume, model, config_hash, opt.optimizer)
        if state.total_iterations != total:
            raise ConfigError(f"checkpoint was written for {state.total_iterations} iterations, config asks {total}")
        start = state.iteration
        if state.numpy_rng is not None:
            rng.bit_generator.state = state.numpy_rng
        if state.torch_rng is not None:
            noise.set_state(state.torch_rng)
        if state.best_value is not None:
            best_value, best_iteration = state.best_value, state.best_iteration
            best_path = Path(resume).with_name(BEST_CHECKPOINT)
            if best_path.exists():
                best_model = copy.deepcopy(model)
                load_checkpoint(best_path, best_model, config_hash)
                best_state = _state_copy(best_model)
        if out_dir is not None:
            records = _previous_rows(Path(out_dir) / "train_log.csv", start)
            val_records = _previous_rows(Path(out_dir) / "val_log.csv", start)
        logger.info(f"Resuming from {resume} at iteration {start}")

    fixed = None if cfg.augment else [make_target(s, organs, mode, max_points) for s in train]
    val_targets = [make_target(s, organs, mode, max_points) for s in val]
    end = total if stop_at is None else min(stop_at, total)
    clock = time.perf_counter()
    model.train()

    for it in range(start, end):
        batch_size = min(batch_size_at(it, total, cfg), len(train))
        indices = rng.choice(len(train), size=batch_size, replace=False)
        if fixed is not None:
            batch = [fixed[i] for i in indices]
        else:
            batch = [make_target(augment(train[i], dataset_cfg, rng), organs, mode, max_points) for i in indices]
        x = torch.stack([t.input for t in batch])
        eps = torch.randn((batch_size, model.latent_dim), generator=noise, dtype=torch.float64)
        weights = schedule_weights(it, total, config.loss).weights(config.loss.raster)

        opt.zero_grad()
        output = model(x, eps)
        bundle = batch_loss(output, batch, topology, weights, config.raster.sigma, config.loss.raster)
        record = bundle.as_record()
        if not all(math.isfinite(v) for v in record.values()):
            raise TrainingDivergedError(f"non-finite loss at iteration {it}: {record}", iteration=it, terms=record)
        bundle.total.backward()
        adam_step(opt)
        records.append({"iteration": it, **record, "batch_size": batch_size, "wall_time": time.perf_counter() - clock})

        done = it + 1
        if done % cfg.val_every == 0 or done == end:
            value = validation_chamfer(model, val_targets or batch)
            val_records.append({"iteration": done, "val_chamfer": value})
            if value < best_value:
                best_value, best_iteration, best_state = value, done, _state_copy(model)
            logger.info(f"Iteration {done}/{total}: loss {record['total']:.5g}, validation Chamfer {value:.5g}")
            if out_dir is not None:
                state = CheckpointState(
                    iteration=done,
                    total_iterations=total,
                    best_value=best_value,
                    best_iteration=best_iteration,
                    numpy_rng=rng.bit_generator.state,
                    torch_rng=noise.get_state(),
                )
                save_checkpoint(Path(out_dir) / LAST_CHECKPOINT, model, config_hash, opt.optimizer, state)
                if best_iteration == done:
                    save_checkpoint(Path(out_dir) / BEST_CHECKPOINT, model, config_hash, state=state)
        else:
            logger.debug(f"Iteration {done}/{total}: loss {record['total']:.5g}")

    train_log = pd.DataFrame(records)
    val_log = pd.DataFrame(val_records, columns=["iteration", "val_chamfer"])
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        train_log.to_csv(out_dir / "train_log.csv", index=False)
        val_log.to_csv(out_dir / "val_log.csv", index=False)
    if best_state:
        model.load_state_dict(best_state)
    return TrainResult(
        best_iteration=best_iteration,
        best_value=best_value,
        last_iteration=max(end, start),
        train_log=train_log,
        val_log=val_log,
        best_state=best_state,
    )


def _previous_rows(path: Path, before: int) -> list[dict]:
    if not path.exists():
        return []
    df = pd.read_csv(path)
    if "iteration" not in df.columns:
        return []
    column = df["iteration"]
    keep = df[column < before] if path.name == "train_log.csv" else df[column <= before]
    return keep.to_dict(orient="records")
