"""Tests for the loss schedule, Adam, snake fitting and population training."""

import math

import numpy as np
import pytest
import torch

from maskgraph.config import LossConfig, RunConfig, SnakeConfig, TrainConfig
from maskgraph.engine.optim import OptState, adam_step
from maskgraph.engine.schedule import schedule_weights
from maskgraph.engine.snake import boundary_points, initial_landmarks, snake_fit, snap_landmarks
from maskgraph.engine.trainer import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    batch_size_at,
    make_target,
    train_population,
    validation_chamfer,
)
from maskgraph.errors import ConfigError, ContourError, ShapeError, TrainingDivergedError
from maskgraph.evaluation.metrics import dice
from maskgraph.model import MaskHybridGNet
from maskgraph.rasterizer import hard_rasterize
from maskgraph.topology import build_independent

from .conftest import disk_mask, make_sample

_THETA = np.linspace(0.0, 2 * np.pi, 64, endpoint=False)


def _model(topology, run_config, seed: int = 0) -> MaskHybridGNet:
    torch.manual_seed(seed)
    return MaskHybridGNet(topology, run_config.model, run_config.inputsize)


class TestSchedule:
    """Test the loss-weight schedule."""

    def test_start(self):
        """Test the weights at iteration zero."""
        state = schedule_weights(0, 3000)
        assert (state.lambda_k, state.alpha, state.beta, state.gamma) == (1e-6, 1e-6, 300.0, 250.0)
        assert (state.lambda_c, state.lambda_p) == (10.0, 1.0)

    def test_end(self):
        """Test the weights at the last iteration."""
        state = schedule_weights(3000, 3000)
        assert state.lambda_k == 1e-3
        assert state.alpha == 1.0
        assert state.beta == pytest.approx(3.0)
        assert state.gamma == pytest.approx(2.5)

    @pytest.mark.parametrize("iteration", [1000, 1001, 2000, 3000])
    def test_alpha_plateau(self, iteration):
        """Test that the uniform weight is exactly one from a third of the run on."""
        assert schedule_weights(iteration, 3000).alpha == 1.0

    def test_geometric_midpoints(self):
        """Test the geometric interpolation halfway through each ramp."""
        assert schedule_weights(1500, 3000).lambda_k == pytest.approx(10**-4.5)
        assert schedule_weights(500, 3000).alpha == pytest.approx(1e-3)

    def test_decay_monotone(self):
        """Test that the elastic weight decays over the run."""
        betas = [schedule_weights(it, 100).beta for it in range(101)]
        assert all(b < a for a, b in zip(betas, betas[1:], strict=False))

    def test_no_raster(self):
        """Test that disabling the raster path zeroes the pixel weight."""
        assert schedule_weights(10, 100).weights(raster=False).lambda_p == 0.0

    def test_custom_config(self):
        """Test that the endpoints come from the loss config."""
        cfg = LossConfig(lambda_k_start=1e-4, lambda_k_end=1e-2)
        assert schedule_weights(100, 100, cfg).lambda_k == 1e-2

    @pytest.mark.parametrize(("iteration", "total"), [(0, 0), (-1, 10), (11, 10)])
    def test_invalid(self, iteration, total):
        """Test that a zero total or an out-of-range iteration is rejected."""
        with pytest.raises(ConfigError):
            schedule_weights(iteration, total)


class TestAdam:
    """Test the guarded Adam step."""

    def test_zero_gradient(self):
        """Test that zero gradients leave the parameters unchanged."""
        p = torch.nn.Parameter(torch.tensor([1.0, 2.0], dtype=torch.float64))
        state = OptState.create([("p", p)], lr=0.1)
        adam_step(state, [torch.zeros(2, dtype=torch.float64)])
        assert p.tolist() == [1.0, 2.0]

    def test_unit_first_step(self):
        """Test that a unit gradient moves a scalar by the learning rate on the first step."""
        p = torch.nn.Parameter(torch.tensor([0.0], dtype=torch.float64))
        state = OptState.create([("p", p)], lr=1e-3)
        adam_step(state, [torch.ones(1, dtype=torch.float64)])
        assert p.item() == pytest.approx(-1e-3, rel=1e-6)
        assert state.step_count == 1
        assert state.lr == 1e-3

    def test_non_finite(self):
        """Test that a NaN gradient names its parameter and changes nothing."""
        a = torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))
        b = torch.nn.Parameter(torch.zeros(3, dtype=torch.float64))
        state = OptState.create([("encoder.a", a), ("decoder.b", b)], lr=0.1)
        grads = [torch.ones(2, dtype=torch.float64), torch.tensor([0.0, math.nan, 1.0], dtype=torch.float64)]
        with pytest.raises(TrainingDivergedError) as excinfo:
            adam_step(state, grads)
        assert excinfo.value.parameter == "decoder.b"
        assert a.tolist() == [0.0, 0.0]

    def test_deterministic(self):
        """Test that two runs from the same start follow the same trajectory."""
        trajectories = []
        for _ in range(2):
            p = torch.nn.Parameter(torch.tensor([0.5, -0.5], dtype=torch.float64))
            state = OptState.create([("p", p)], lr=0.05)
            for _ in range(10):
                state.zero_grad()
                (p**2).sum().backward()
                adam_step(state)
            trajectories.append(p.detach().clone())
        assert torch.equal(*trajectories)


class TestSnake:
    """Test direct landmark fitting."""

    def test_initial_circle(self):
        """Test that initialization starts at the top and runs clockwise."""
        mask = disk_mask(32, (16.0, 16.0), 5.0)
        graph = build_independent({1: 16}, 1).levels[0]
        start = initial_landmarks(mask, graph)
        radius = math.sqrt(np.count_nonzero(mask) / math.pi)
        assert start[0] == pytest.approx([16.0, 16.0 - radius])
        assert start[1, 0] > 16.0
        assert np.linalg.norm(start - 16.0, axis=1) == pytest.approx(np.full(16, radius))

    def test_circle_fit(self):
        """Test that a fitted circle covers its target."""
        mask = disk_mask(32, (16.0, 16.0), 10.0)
        result = snake_fit(mask, build_independent({1: 24}, 1), iterations=200)
        assert result.present == (1,)
        assert len(result.losses) == 200
        assert min(result.losses[-10:]) <= result.losses[0]
        assert dice(hard_rasterize(result.landmarks, 32, 32), mask == 1) >= 0.95

    def test_stationary_near_optimum(self):
        """Test that restarting from a converged fit does not raise the loss."""
        mask = disk_mask(32, (16.0, 16.0), 10.0)
        topology = build_independent({1: 24}, 1)
        converged = snake_fit(mask, topology, iterations=200).landmarks
        again = snake_fit(mask, topology, SnakeConfig(learning_rate=1e-5), iterations=20, init=converged)
        assert all(b <= a + 1e-6 for a, b in zip(again.losses, again.losses[1:], strict=False))

    @pytest.mark.parametrize(
        "target",
        [
            disk_mask(32, (16.0, 16.0), 10.0),
            hard_rasterize(
                np.stack([16.3 + 11.0 * np.cos(_THETA), 15.8 + 6.5 * np.sin(_THETA)], axis=1), 32, 32
            ).astype(np.uint8),
        ],
        ids=["disk", "ellipse"],
    )
    def test_loss_non_increasing_windows(self, target):
        """Test that after a warm-up every 50-iteration window ends no higher than it began."""
        losses = snake_fit(target, build_independent({1: 24}, 1), iterations=400).losses
        for start in range(100, len(losses) - 50):
            assert losses[start + 50] <= losses[start] + 1e-6, start

    @pytest.mark.filterwarnings("error::UserWarning")
    def test_loss_trace_without_warnings(self):
        """Test that recording the loss trace raises no tensor conversion warning."""
        result = snake_fit(disk_mask(16, (8.0, 8.0), 5.0), build_independent({1: 12}, 1), iterations=3)
        assert all(isinstance(v, float) for v in result.losses)

    def test_absent_organ(self):
        """Test that an absent organ stays at the image center."""
        mask = disk_mask(32, (10.0, 10.0), 5.0)
        topology = build_independent({1: 12, 2: 12}, 1)
        result = snake_fit(mask, topology, iterations=5)
        assert result.present == (1,)
        assert np.allclose(result.landmarks[12:], 16.0)

    def test_no_organ(self):
        """Test that a mask without any configured organ is rejected."""
        with pytest.raises(ContourError):
            snake_fit(np.zeros((16, 16), dtype=np.uint8), build_independent({1: 8}, 1), iterations=1)

    def test_snap(self):
        """Test that snapped landmarks lie on boundary pixel centers."""
        mask = disk_mask(32, (16.0, 16.0), 8.0)
        graph = build_independent({1: 16}, 1).levels[0]
        snapped = snap_landmarks(initial_landmarks(mask, graph) + 0.3, mask, graph)
        boundary = {tuple(p) for p in boundary_points(mask, [1])[1]}
        assert all(tuple(p) in boundary for p in snapped)


class TestTrainer:
    """Test population training."""

    def test_batch_ramp(self):
        """Test batch size one during the first tenth of the run."""
        cfg = TrainConfig(batch_size=4)
        assert [batch_size_at(it, 100, cfg) for it in (0, 9, 10, 99)] == [1, 1, 4, 4]

    def test_target(self):
        """Test that targets only supervise annotated organs present in the mask."""
        mask = disk_mask(16, (5.0, 8.0), 3.0) + disk_mask(16, (11.0, 8.0), 3.0, label=2)
        target = make_target(make_sample(mask, organs=(1,)), (1, 2))
        assert target.annotated == (1,)
        assert target.input.shape == (1, 16, 16)
        assert bool(((target.truth[1] > 0) & (target.truth[1] < 1)).all())

    def test_logs_and_checkpoints(self, tmp_path, ring_topology, tiny_run_config, disk_samples):
        """Test the loss logs, the batch-size ramp and the checkpoint files."""
        model = _model(ring_topology, tiny_run_config)
        result = train_population(model, disk_samples[:3], disk_samples[3:], tiny_run_config, tmp_path)
        assert result.train_log["iteration"].tolist() == list(range(6))
        assert result.train_log["batch_size"].tolist() == [1, 2, 2, 2, 2, 2]
        assert result.val_log["iteration"].tolist() == [3, 6]
        assert result.last_iteration == 6
        assert result.best_value == result.val_log["val_chamfer"].min()
        for name in ("train_log.csv", "val_log.csv", LAST_CHECKPOINT, BEST_CHECKPOINT):
            assert (tmp_path / name).exists()

    def test_best_state_loaded(self, ring_topology, tiny_run_config, disk_samples):
        """Test that the model ends in its best validation state."""
        model = _model(ring_topology, tiny_run_config)
        result = train_population(model, disk_samples[:3], disk_samples[3:], tiny_run_config)
        val_targets = [make_target(s, (1,)) for s in disk_samples[3:]]
        assert validation_chamfer(model, val_targets) == pytest.approx(result.best_value)

    def test_resume_bit_exact(self, tmp_path, ring_topology, tiny_run_config, disk_samples):
        """Test that resuming reproduces the uninterrupted losses exactly."""
        train, val = disk_samples[:3], disk_samples[3:]
        full = train_population(_model(ring_topology, tiny_run_config), train, val, tiny_run_config, tmp_path / "a")
        train_population(_model(ring_topology, tiny_run_config), train, val, tiny_run_config, tmp_path / "b", stop_at=3)
        resumed = train_population(
            _model(ring_topology, tiny_run_config, seed=9),
            train,
            val,
            tiny_run_config,
            tmp_path / "b",
            resume=tmp_path / "b" / LAST_CHECKPOINT,
        )
        expected = full.train_log.set_index("iteration")["total"]
        got = resumed.train_log.set_index("iteration")["total"]
        assert got.index.tolist() == list(range(6))
        for it in range(3, 6):
            assert got[it] == expected[it]

    def test_resume_wrong_length(self, tmp_path, ring_topology, tiny_run_config, disk_samples):
        """Test that a checkpoint from a run of another length is rejected."""
        train_population(
            _model(ring_topology, tiny_run_config), disk_samples[:3], [], tiny_run_config, tmp_path, stop_at=3
        )
        longer = RunConfig.from_mapping({**tiny_run_config.to_dict(), "train": {"iterations": 12}})
        with pytest.raises(ConfigError, match="iterations"):
            train_population(
                _model(ring_topology, longer), disk_samples[:3], [], longer, resume=tmp_path / LAST_CHECKPOINT
            )

    def test_heterogeneous_annotations(self, tiny_run_config):
        """Test that organs missing from some annotations are still predicted as closed contours."""
        topology = build_independent({1: 12, 2: 12}, 2)
        mask = disk_mask(16, (5.0, 8.0), 3.0) + disk_mask(16, (11.0, 8.0), 3.0, label=2)
        samples = [
            make_sample(mask, subject_id=f"s{k}", organs=(1, 2) if k % 2 else (1,), seed=k) for k in range(4)
        ]
        model = _model(topology, tiny_run_config)
        train_population(model, samples[:3], samples[3:], tiny_run_config)
        landmarks = model.predict(samples[0].image)
        polygons = topology.levels[0].split(landmarks)
        assert polygons[2].shape == (12, 2)
        assert np.isfinite(polygons[2]).all()

    def test_non_finite_loss(self, ring_topology, tiny_run_config, disk_samples):
        """Test that a NaN input aborts at the first iteration with the term breakdown."""
        for sample in disk_samples:
            sample.image[:] = np.nan
        with pytest.raises(TrainingDivergedError) as excinfo:
            train_population(_model(ring_topology, tiny_run_config), disk_samples[:3], [], tiny_run_config)
        assert excinfo.value.iteration == 0
        assert "chamfer" in excinfo.value.terms

    def test_wrong_size(self, ring_topology, tiny_run_config):
        """Test that samples not at the input size are rejected."""
        sample = make_sample(disk_mask(12, (6.0, 6.0), 3.0))
        with pytest.raises(ShapeError):
            train_population(_model(ring_topology, tiny_run_config), [sample], [], tiny_run_config)

    def test_empty(self, ring_topology, tiny_run_config):
        """Test that an empty training set is rejected."""
        with pytest.raises(ConfigError):
            train_population(_model(ring_topology, tiny_run_config), [], [], tiny_run_config)
