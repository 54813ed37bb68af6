"""Adam with a finiteness guard on every gradient."""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import torch

from maskgraph.errors import TrainingDivergedError

BETAS = (0.9, 0.999)
EPS = 1e-8


@dataclass
class OptState:
    """An Adam optimizer together with the names of the parameters it updates."""

    optimizer: torch.optim.Adam
    names: list[str]

    @classmethod
    def create(cls, named_parameters: Iterable[tuple[str, torch.nn.Parameter]], lr: float) -> "OptState":
        named = list(named_parameters)
        optimizer = torch.optim.Adam([p for _, p in named], lr=lr, betas=BETAS, eps=EPS)
        return cls(optimizer=optimizer, names=[name for name, _ in named])

    @property
    def params(self) -> list[torch.nn.Parameter]:
        return self.optimizer.param_groups[0]["params"]

    @property
    def step_count(self) -> int:
        steps = [int(s["step"]) for s in self.optimizer.state.values() if "step" in s]
        return max(steps, default=0)

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=True)


def adam_step(state: OptState, grads: Sequence[torch.Tensor | None] | None = None) -> OptState:
    """One bias-corrected Adam update.

    Args:
        state: optimizer and parameter names
        grads: gradients in parameter order; when omitted the ``.grad`` fields
            filled by a backward pass are used

    Raises:
        TrainingDivergedError: naming the first parameter with a non-finite gradient
    """
    if grads is not None:
        for p, g in zip(state.params, grads, strict=True):
            p.grad = None if g is None else g.detach().clone()
    for name, p in zip(state.names, state.params, strict=True):
        if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
            raise TrainingDivergedError(f"non-finite gradient in parameter {name}", parameter=name)
    state.optimizer.step()
    return state
