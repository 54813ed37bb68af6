"""The landmark network: image encoder, variational bottleneck, graph decoder and auxiliary mask decoder.

Landmarks leave the network in normalized coordinates (pixel units divided by
the input side). Every level of the topology gets its own readout; the finest
level is the segmentation.
"""

import dataclasses
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import torch
import torch.nn as nn
import torch.nn.functional as F

from maskgraph.config import ModelConfig, fingerprint
from maskgraph.contours import largest_component
from maskgraph.data.masks import Sample
from maskgraph.errors import ConfigError, ShapeError
from maskgraph.model.layers import ChebConv, igsc, reparameterize, scaled_laplacian
from maskgraph.topology.graph import GraphTopology

READOUT_BIAS = 0.5


class Encoder(nn.Module):
    """Strided 3×3 convolution stages followed by parallel linear heads for mu and log_var."""

    def __init__(self, in_channels: int, widths: Sequence[int], input_size: int, latent_dim: int, slope: float):
        super().__init__()
        reduction = 2 ** len(widths)
        if input_size % reduction:
            raise ShapeError(f"input size {input_size} is not divisible by {reduction} ({len(widths)} stages)")
        self.input_size = input_size
        stages, c_in = [], in_channels
        for width in widths:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(c_in, width, 3, stride=2, padding=1),
                    nn.LeakyReLU(slope),
                    nn.Conv2d(width, width, 3, padding=1),
                    nn.LeakyReLU(slope),
                )
            )
            c_in = width
        self.stages = nn.ModuleList(stages)
        flat = widths[-1] * (input_size // reduction) ** 2
        self.mu = nn.Linear(flat, latent_dim)
        self.log_var = nn.Linear(flat, latent_dim)

    def forward(self, image: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor, torch.Tensor]:
        maps, x = [], image
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        flat = x.flatten(1)
        return maps, self.mu(flat), self.log_var(flat)


class AuxDecoder(nn.Module):
    """U-Net style dense decoder with one sigmoid output channel per organ.

    Starting from the deepest encoder map, each step doubles the resolution and
    concatenates the encoder map of that resolution (the input image at full
    resolution). The refined map at every encoder resolution is returned for
    the graph decoder to sample.
    """

    def __init__(self, widths: Sequence[int], in_channels: int, num_organs: int, slope: float):
        super().__init__()
        self.slope = slope
        steps, c_in = [], widths[-1]
        for k in reversed(range(len(widths))):
            skip = widths[k - 1] if k else in_channels
            out = widths[k - 1] if k else widths[0]
            steps.append(nn.Conv2d(c_in + skip, out, 3, padding=1))
            c_in = out
        self.steps = nn.ModuleList(steps)
        self.head = nn.Conv2d(c_in, num_organs, 1)

    def forward(self, maps: Sequence[torch.Tensor], image: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        refined = [maps[-1]]
        x = maps[-1]
        skips = [*maps[-2::-1], image]
        for conv, skip in zip(self.steps, skips, strict=True):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.leaky_relu(conv(torch.cat([x, skip], dim=1)), self.slope)
            refined.append(x)
        soft = torch.sigmoid(self.head(x))
        # refined maps at the encoder stage resolutions, finest first
        return soft, refined[-2::-1]


class GraphDecoder(nn.Module):
    """Hierarchical Chebyshev decoder from the latent code to landmarks at every level.

    The latent code is projected to node features at the coarsest level. Each
    level runs its Chebyshev block and a per-node linear readout to (x, y); the
    feature map paired with the level is then sampled at those coordinates and
    the result is unpooled to the next finer level.
    """

    def __init__(self, topology: GraphTopology, latent_dim: int, map_widths: Sequence[int], cfg: ModelConfig):
        super().__init__()
        self.levels = topology.resolution_levels
        self.width = cfg.graph_width
        self.slope = cfg.leaky_slope
        self.num_stages = len(map_widths)
        counts = [topology.num_nodes(r) for r in range(self.levels)]
        self.coarse_nodes = counts[-1]

        for r, level in enumerate(topology.levels):
            self.register_buffer(f"laplacian_{r}", scaled_laplacian(level.adjacency()), persistent=False)
        for r, up in enumerate(topology.up):
            self.register_buffer(f"up_{r}", torch.as_tensor(up.toarray(), dtype=torch.float64), persistent=False)

        self.project = nn.Linear(latent_dim, counts[-1] * cfg.graph_width)
        blocks, readouts = [], []
        for r in range(self.levels):
            in_width = cfg.graph_width
            if r < self.levels - 1:
                in_width += map_widths[self.stage_for_level(r + 1)] + 2
            layers = [ChebConv(in_width, cfg.graph_width, cfg.cheb_order)]
            layers += [ChebConv(cfg.graph_width, cfg.graph_width, cfg.cheb_order) for _ in range(cfg.cheb_layers - 1)]
            blocks.append(nn.ModuleList(layers))
            readout = nn.Linear(cfg.graph_width, 2)
            nn.init.constant_(readout.bias, READOUT_BIAS)
            readouts.append(readout)
        self.blocks = nn.ModuleList(blocks)
        self.readouts = nn.ModuleList(readouts)

    def stage_for_level(self, level: int) -> int:
        """Feature-map stage sampled at ``level`` (0 = finest), coarser levels pairing with deeper stages."""
        return min(level, self.num_stages - 1)

    def laplacian(self, level: int) -> torch.Tensor:
        return getattr(self, f"laplacian_{level}")

    def unpool(self, level: int) -> torch.Tensor:
        return getattr(self, f"up_{level}")

    def forward(self, z: torch.Tensor, maps: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        x = F.leaky_relu(self.project(z), self.slope).view(z.shape[0], self.coarse_nodes, self.width)
        outputs: list[torch.Tensor] = [z.new_empty(0)] * self.levels
        for r in reversed(range(self.levels)):
            if r < self.levels - 1:
                x = self.unpool(r) @ x
            for conv in self.blocks[r]:
                x = F.leaky_relu(conv(x, self.laplacian(r)), self.slope)
            coords = self.readouts[r](x)
            outputs[r] = coords
            if r > 0:
                x = igsc(x, maps[self.stage_for_level(r)], coords)
        return outputs


@dataclass
class ModelOutput:
    """Forward pass results. ``landmarks[r]`` is (B, N_r, 2), finest level first."""

    landmarks: list[torch.Tensor]
    mu: torch.Tensor
    log_var: torch.Tensor
    z: torch.Tensor
    aux: torch.Tensor | None = None

    @property
    def finest(self) -> torch.Tensor:
        return self.landmarks[0]


class MaskHybridGNet(nn.Module):
    """Variational image-to-graph network with optional auxiliary dense decoder.

    Args:
        topology: the population's graph topology; one decoder level per topology level
        cfg: network sizes and variant switches
        input_size: side of the square network input
    """

    def __init__(self, topology: GraphTopology, cfg: ModelConfig | None = None, input_size: int = 64):
        super().__init__()
        cfg = cfg or ModelConfig()
        if cfg.dual and cfg.input == "mask":
            raise ConfigError("the auxiliary decoder is disabled in mask input mode")
        self.topology = topology
        self.config = cfg
        self.input_size = input_size
        widths = tuple(cfg.encoder_widths)
        self.encoder = Encoder(1, widths, input_size, cfg.latent_dim, cfg.leaky_slope)
        self.decoder = GraphDecoder(topology, cfg.latent_dim, widths, cfg)
        self.aux = AuxDecoder(widths, 1, len(topology.organs), cfg.leaky_slope) if cfg.dual else None
        self.double()

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def config_hash(self) -> str:
        """Fingerprint of everything the parameter layout depends on."""
        return fingerprint(
            {
                "topology": self.topology.fingerprint(),
                "model": dataclasses.asdict(self.config),
                "input_size": self.input_size,
            }
        )

    def encode(self, image: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor, torch.Tensor]:
        """Encoder feature maps (finest first) and the latent Gaussian's mu and log_var."""
        if image.dim() != 4 or image.shape[1] != 1 or tuple(image.shape[-2:]) != (self.input_size,) * 2:
            raise ShapeError(
                f"expected input of shape (B, 1, {self.input_size}, {self.input_size}), got {tuple(image.shape)}"
            )
        return self.encoder(image)

    def decode_graph(self, z: torch.Tensor, maps: Sequence[torch.Tensor]) -> list[torch.Tensor]:
        return self.decoder(z, maps)

    def decode_aux(self, maps: Sequence[torch.Tensor], image: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Soft masks (B, organs, H, W) and the refined maps for the graph decoder."""
        if self.aux is None:
            raise ConfigError("decode_aux needs the dual variant (model.dual = true)")
        return self.aux(maps, image)

    def forward(self, image: torch.Tensor, eps: torch.Tensor | None = None) -> ModelOutput:
        """Run the network; ``eps=None`` decodes the posterior mean."""
        maps, mu, log_var = self.encode(image)
        z = reparameterize(mu, log_var, torch.zeros_like(mu) if eps is None else eps)
        aux = None
        if self.aux is not None:
            aux, maps = self.decode_aux(maps, image)
        return ModelOutput(landmarks=self.decode_graph(z, maps), mu=mu, log_var=log_var, z=z, aux=aux)

    @torch.no_grad()
    def predict(self, image: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Finest-level landmarks of one input, in pixel units, decoded at the posterior mean."""
        was_training = self.training
        self.eval()
        x = torch.as_tensor(np.asarray(image, dtype=np.float64))[None, None]
        landmarks = self(x).finest[0] * self.input_size
        self.train(was_training)
        return landmarks.numpy()


def model_input(sample: Sample, mode: str, organs: Sequence[int]) -> npt.NDArray[np.float64]:
    """Network input of a sample: the image, or in mask mode the label mask scaled to [0, 1].

    In mask mode each organ is first reduced to its largest connected component.
    """
    if mode == "image":
        return sample.image
    if mode != "mask":
        raise ConfigError(f"unknown input mode {mode!r}")
    cleaned = np.zeros(sample.mask.shape, dtype=np.float64)
    for organ in organs:
        cleaned[largest_component(sample.mask == organ)] = organ
    return cleaned / max(organs)
