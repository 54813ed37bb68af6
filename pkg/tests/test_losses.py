"""Tests for the Chamfer, pixel, KL and edge losses and their combination."""

import math

import numpy as np
import pytest
import torch

from maskgraph.config import LossConfig
from maskgraph.errors import ContourError
from maskgraph.losses import (
    LossParts,
    LossWeights,
    chamfer_loss,
    edge_regularizers,
    kl_loss,
    pixel_loss,
    total_loss,
    value_and_grad,
)
from maskgraph.topology import EdgeTensor, build_independent

from .conftest import central_difference, relative_error


def _t(values) -> torch.Tensor:
    return torch.tensor(values, dtype=torch.float64)


def _square(side: float, offset: float = 0.0) -> list[tuple[float, float]]:
    return [(offset, 0.0), (offset + side, 0.0), (offset + side, side), (offset, side)]


class TestChamfer:
    """Test the symmetric Chamfer loss."""

    def test_identical(self):
        """Test that identical point sets have zero loss."""
        points = _t([[0.1, 0.2], [0.5, 0.5], [0.9, 0.3]])
        assert float(chamfer_loss({1: points}, {1: points.clone()}, [1])) == 0.0

    def test_hand_value(self):
        """Test a single predicted point against two truth points."""
        loss = chamfer_loss({1: _t([[0.0, 0.0]])}, {1: _t([[1.0, 0.0], [0.0, 1.0]])}, [1])
        assert float(loss) == pytest.approx(2.0)

    def test_unannotated_organ_ignored(self):
        """Test that an unannotated organ adds nothing and gets zero gradient."""
        truth = {1: _t([[1.0, 0.0], [0.0, 1.0]])}
        value, (g1, g2) = value_and_grad(
            lambda p1, p2: chamfer_loss({1: p1, 2: p2}, truth, [1]), _t([[0.0, 0.0]]), _t([[5.0, 5.0], [6.0, 6.0]])
        )
        assert value == pytest.approx(2.0)
        assert not g1.eq(0).all()
        assert g2.eq(0).all()

    def test_empty_truth(self):
        """Test that an annotated organ without truth points is rejected."""
        with pytest.raises(ContourError):
            chamfer_loss({1: _t([[0.0, 0.0]])}, {1: torch.zeros((0, 2), dtype=torch.float64)}, [1])

    def test_gradient(self):
        """Test the analytic gradient against central differences."""
        rng = np.random.default_rng(0)
        truth = {1: _t(rng.uniform(0, 1, (7, 2)))}
        pred = _t(rng.uniform(0, 1, (5, 2)))
        _, (analytic,) = value_and_grad(lambda p: chamfer_loss({1: p}, truth, [1]), pred)
        numeric = central_difference(lambda p: chamfer_loss({1: p}, truth, [1]), pred)
        assert relative_error(analytic, numeric) < 1e-4


class TestPixelLoss:
    """Test the soft Dice plus cross-entropy loss."""

    def test_perfect(self):
        """Test that a perfect soft mask has near-zero loss."""
        gt = torch.zeros((4, 4), dtype=torch.float64)
        gt[1:3, 1:3] = 1.0
        assert float(pixel_loss({1: gt.clone()}, {1: gt}, [1])) == pytest.approx(0.0, abs=1e-6)

    def test_uniform_half(self):
        """Test a uniform 0.5 prediction against four foreground pixels."""
        gt = torch.zeros((4, 4), dtype=torch.float64)
        gt[1:3, 1:3] = 1.0
        soft = torch.full((4, 4), 0.5, dtype=torch.float64)
        expected = math.log(2.0) + (1.0 - 5.0 / 13.0)
        assert float(pixel_loss({1: soft}, {1: gt}, [1])) == pytest.approx(expected)

    def test_no_annotated_organs(self):
        """Test that nothing annotated gives zero."""
        soft = torch.full((4, 4), 0.5, dtype=torch.float64)
        assert float(pixel_loss({1: soft}, {1: soft}, [])) == 0.0


class TestKL:
    """Test the Gaussian KL divergence."""

    @pytest.mark.parametrize(
        ("mu", "log_var", "expected"), [(0.0, 0.0, 0.0), (1.0, 0.0, 0.5), (0.0, math.log(4.0), 0.806853)]
    )
    def test_values(self, mu, log_var, expected):
        """Test hand-computed divergences."""
        assert float(kl_loss(_t([mu]), _t([log_var]))) == pytest.approx(expected, abs=1e-6)

    def test_gradients(self):
        """Test that d/dmu = mu and d/dlog_var = (exp(log_var) - 1) / 2."""
        mu, log_var = _t([0.3, -1.2]), _t([0.5, -0.7])
        _, (g_mu, g_lv) = value_and_grad(kl_loss, mu, log_var)
        assert torch.allclose(g_mu, mu)
        assert torch.allclose(g_lv, 0.5 * (log_var.exp() - 1.0))

    def test_batch_mean(self):
        """Test that leading batch dimensions are averaged."""
        mu = _t([[1.0, 0.0], [0.0, 0.0]])
        assert float(kl_loss(mu, torch.zeros_like(mu))) == pytest.approx(0.25)

    def test_shape_mismatch(self):
        """Test that mismatched shapes are rejected."""
        with pytest.raises(ValueError):
            kl_loss(_t([0.0, 0.0]), _t([0.0]))


class TestEdgeRegularizers:
    """Test the uniform, elastic and curvature terms."""

    def test_unit_square(self):
        """Test the three terms on a unit square."""
        edges = build_independent({1: 4}, 1).edge_tensor(0)
        terms = edge_regularizers(_t(_square(1.0)), edges)
        assert float(terms.uniform) == pytest.approx(0.0)
        assert float(terms.elastic) == pytest.approx(1.0)
        assert float(terms.curvature) == pytest.approx(2.0)

    def test_rectangle_uniform(self):
        """Test that sides of 2 and 1 give a uniform term of 1/9."""
        edges = build_independent({1: 4}, 1).edge_tensor(0)
        terms = edge_regularizers(_t([(0, 0), (2, 0), (2, 1), (0, 1)]), edges)
        assert float(terms.uniform) == pytest.approx(1.0 / 9.0)
        assert float(terms.mean_lengths[0]) == pytest.approx(1.5)

    def test_straight_chain(self):
        """Test that an evenly spaced straight chain has no curvature."""
        edges = EdgeTensor(
            organs=(1,),
            edges=np.array([[[0, 1], [1, 2]]]),
            valid=np.array([[True, True]]),
            edge_organ_map=np.array([0, 0]),
            pairs=np.array([[[0, 1], [0, 0]]]),
            pair_valid=np.array([[True, False]]),
        )
        terms = edge_regularizers(_t([(0, 0), (1, 0), (2, 0)]), edges)
        assert float(terms.curvature) == 0.0
        assert float(terms.uniform) == pytest.approx(0.0)

    def test_perimeter_weights(self):
        """Test that perimeters of 10 and 5 give weights 1 and 1/2."""
        edges = build_independent({1: 4, 2: 4}, 1).edge_tensor(0)
        terms = edge_regularizers(_t(_square(2.5) + _square(1.25, offset=5.0)), edges)
        assert terms.perimeters.tolist() == pytest.approx([10.0, 5.0])
        assert terms.weights.tolist() == pytest.approx([1.0, 0.5])
        assert float(terms.elastic) == pytest.approx((6.25 + 0.5 * 1.5625) / 2)

    def test_zero_perimeter(self):
        """Test that a collapsed organ gets weight zero and no uniform penalty."""
        edges = build_independent({1: 4, 2: 4}, 1).edge_tensor(0)
        terms = edge_regularizers(_t(_square(1.0) + [(3.0, 3.0)] * 4), edges)
        assert terms.weights.tolist() == [1.0, 0.0]
        assert float(terms.uniform) == pytest.approx(0.0)

    def test_organ_subset(self):
        """Test that restricting to one organ ignores the other."""
        edges = build_independent({1: 4, 2: 4}, 1).edge_tensor(0)
        terms = edge_regularizers(_t(_square(1.0) + _square(3.0, offset=5.0)), edges, organs=[1])
        assert float(terms.elastic) == pytest.approx(1.0)

    @pytest.mark.parametrize("term", ["elastic", "curvature"])
    def test_gradient(self, term):
        """Test the elastic and curvature gradients against central differences."""
        edges = build_independent({1: 9}, 1).edge_tensor(0)
        rng = np.random.default_rng(4)
        angles = np.linspace(0, 2 * np.pi, 9, endpoint=False)
        coords = _t(np.stack([np.cos(angles), np.sin(angles)], axis=1) + rng.normal(0, 0.05, (9, 2)))

        def fn(c):
            return getattr(edge_regularizers(c, edges), term)

        _, (analytic,) = value_and_grad(fn, coords)
        assert relative_error(analytic, central_difference(fn, coords)) < 1e-5

    def test_uniform_gradient_holds_mean_fixed(self):
        """Test that the uniform gradient treats the mean edge length as a constant."""
        edges = build_independent({1: 6}, 1).edge_tensor(0)
        rng = np.random.default_rng(5)
        coords = _t(rng.uniform(0, 1, (6, 2)))
        frozen = float(edge_regularizers(coords, edges).mean_lengths[0])

        def oracle(c):
            lengths = torch.linalg.vector_norm(c - torch.roll(c, -1, dims=0), dim=1)
            return (((lengths - frozen) / frozen) ** 2).mean()

        _, (analytic,) = value_and_grad(lambda c: edge_regularizers(c, edges).uniform, coords)
        assert relative_error(analytic, central_difference(oracle, coords)) < 1e-5


class TestTotalLoss:
    """Test the weighted combination."""

    def test_zero_weights(self):
        """Test that zero weights give a zero total and zero gradients."""
        pred = _t([[0.0, 0.0]]).requires_grad_(True)
        parts = LossParts(chamfer=chamfer_loss({1: pred}, {1: _t([[1.0, 0.0]])}, [1]))
        bundle = total_loss(parts, LossWeights(0.0, 0.0, 0.0, 0.0, 0.0, 0.0))
        assert float(bundle.total) == 0.0
        assert bundle.gradients([pred])[0].eq(0).all()

    def test_chamfer_only(self):
        """Test that a Chamfer weight of one passes the Chamfer value through."""
        chamfer = chamfer_loss({1: _t([[0.0, 0.0]])}, {1: _t([[1.0, 0.0], [0.0, 1.0]])}, [1])
        bundle = total_loss(LossParts(chamfer=chamfer), LossWeights(1.0, 0.0, 0.0, 0.0, 0.0, 0.0))
        assert float(bundle.total) == pytest.approx(2.0)
        record = bundle.as_record()
        assert record["chamfer"] == pytest.approx(2.0)
        assert record["lambda_c"] == 1.0

    def test_edge_weighting(self):
        """Test that the edge term is alpha·uniform + beta·elastic + gamma·curvature."""
        edges = build_independent({1: 4}, 1).edge_tensor(0)
        parts = LossParts(edges=edge_regularizers(_t([(0, 0), (2, 0), (2, 1), (0, 1)]), edges))
        bundle = total_loss(parts, LossWeights(0.0, 0.0, 0.0, 9.0, 2.0, 3.0))
        expected = 9.0 / 9.0 + 2.0 * 2.5 + 3.0 * float(parts.edges.curvature)
        assert float(bundle.edge) == pytest.approx(expected)
        assert float(bundle.total) == pytest.approx(expected)

    def test_initial_weights_without_raster(self):
        """Test that disabling the raster path zeroes the pixel weight."""
        weights = LossWeights.initial(LossConfig(raster=False))
        assert weights.lambda_p == 0.0
        assert weights.lambda_k == 1e-6


def _random_points(rng: np.random.Generator, low: int = 3, high: int = 12) -> torch.Tensor:
    return _t(rng.uniform(0.0, 1.0, (int(rng.integers(low, high)), 2)))


def _ring(rng: np.random.Generator, n: int) -> torch.Tensor:
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = rng.uniform(1.0, 3.0, n)
    return _t(np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1))


class TestLossProperties:
    """Test symmetry, scaling and invariance properties of the geometric losses."""

    @pytest.mark.parametrize("seed", range(10))
    def test_chamfer_symmetric(self, seed):
        """Test that swapping prediction and truth leaves the Chamfer loss unchanged."""
        rng = np.random.default_rng(seed)
        p, g = _random_points(rng), _random_points(rng)
        forward = float(chamfer_loss({1: p}, {1: g}, [1]))
        assert float(chamfer_loss({1: g}, {1: p}, [1])) == pytest.approx(forward, rel=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_chamfer_permutation_invariant(self, seed):
        """Test that reordering either point set leaves the Chamfer value unchanged."""
        rng = np.random.default_rng(seed)
        p, g = _random_points(rng), _random_points(rng)
        expected = float(chamfer_loss({1: p}, {1: g}, [1]))
        shuffled_p = p[torch.as_tensor(rng.permutation(len(p)))]
        shuffled_g = g[torch.as_tensor(rng.permutation(len(g)))]
        assert float(chamfer_loss({1: shuffled_p}, {1: shuffled_g}, [1])) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("scale", [0.5, 2.0, 7.0])
    def test_scaling(self, scale):
        """Test that scaling all points by c scales Chamfer, elastic and curvature by c² only."""
        rng = np.random.default_rng(11)
        p, g = _random_points(rng), _random_points(rng)
        base = float(chamfer_loss({1: p}, {1: g}, [1]))
        assert float(chamfer_loss({1: scale * p}, {1: scale * g}, [1])) == pytest.approx(scale**2 * base, rel=1e-10)

        edges = build_independent({1: 7, 2: 5}, 1).edge_tensor(0)
        coords = torch.cat([_ring(rng, 7), _ring(rng, 5) + 10.0])
        before, after = edge_regularizers(coords, edges), edge_regularizers(scale * coords, edges)
        assert float(after.elastic) == pytest.approx(scale**2 * float(before.elastic), rel=1e-10)
        assert float(after.curvature) == pytest.approx(scale**2 * float(before.curvature), rel=1e-10)
        assert float(after.uniform) == pytest.approx(float(before.uniform), rel=1e-10)
        assert after.weights.tolist() == pytest.approx(before.weights.tolist(), rel=1e-12)

    @pytest.mark.parametrize(
        "coords",
        [
            [(np.cos(a), np.sin(a)) for a in np.linspace(0, 2 * np.pi, 7, endpoint=False)],
            [(0.0, 0.0), (2.0, 1.0), (4.0, 0.0), (2.0, -1.0)],
            [(3.0, 0.0), (3.0, 3.0), (0.0, 3.0), (0.0, 0.0)],
        ],
        ids=["regular-heptagon", "rhombus", "square"],
    )
    def test_uniform_zero_for_equal_edges(self, coords):
        """Test that equal edge lengths, regular or not, give a zero uniform term."""
        edges = build_independent({1: len(coords)}, 1).edge_tensor(0)
        assert float(edge_regularizers(_t(coords), edges).uniform) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_uniform_positive_for_unequal_edges(self, seed):
        """Test that one organ with unequal edges makes the uniform term positive."""
        rng = np.random.default_rng(seed)
        edges = build_independent({1: 4, 2: 6}, 1).edge_tensor(0)
        square = _t(_square(2.0))
        irregular = _ring(rng, 6) + 10.0
        assert float(edge_regularizers(torch.cat([square, irregular]), edges).uniform) > 0.0
