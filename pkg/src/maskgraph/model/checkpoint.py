"""Binary checkpoints of model parameters, optimizer moments and loop state.

Layout (little-endian)::

    b"MHGN" | version u32 | header length u32 | JSON header | float64 blocks

The header lists every parameter's name and shape in declaration order, the
config hash the parameters belong to, and the loop state (iteration, best
validation value, random generator states). The blocks hold the parameters,
then the Adam first and second moments of each parameter in the same order.
"""

import base64
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from loguru import logger

from maskgraph.errors import CheckpointError

MAGIC = b"MHGN"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


@dataclass
class CheckpointState:
    """Loop state saved beside the parameters."""

    iteration: int = 0
    total_iterations: int = 0
    best_value: float | None = None
    best_iteration: int | None = None
    numpy_rng: dict[str, Any] | None = None
    torch_rng: torch.Tensor | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def to_header(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "total_iterations": self.total_iterations,
            "best_value": self.best_value,
            "best_iteration": self.best_iteration,
            "numpy_rng": self.numpy_rng,
            "torch_rng": None
            if self.torch_rng is None
            else base64.b64encode(self.torch_rng.numpy().tobytes()).decode("ascii"),
            "extra": self.extra,
        }

    @classmethod
    def from_header(cls, raw: dict[str, Any]) -> "CheckpointState":
        torch_rng = raw.get("torch_rng")
        return cls(
            iteration=int(raw["iteration"]),
            total_iterations=int(raw["total_iterations"]),
            best_value=raw.get("best_value"),
            best_iteration=raw.get("best_iteration"),
            numpy_rng=raw.get("numpy_rng"),
            torch_rng=None
            if torch_rng is None
            else torch.from_numpy(np.frombuffer(base64.b64decode(torch_rng), dtype=np.uint8).copy()),
            extra=dict(raw.get("extra") or {}),
        )


def _adam_moments(optimizer: torch.optim.Optimizer | None, params: list[torch.nn.Parameter]):
    step, moments = 0, []
    for p in params:
        state = optimizer.state.get(p, {}) if optimizer is not None else {}
        if "step" in state:
            step = int(state["step"])
        moments.append((state.get("exp_avg", torch.zeros_like(p)), state.get("exp_avg_sq", torch.zeros_like(p))))
    return step, moments


def save_checkpoint(
    path: Path,
    model: torch.nn.Module,
    config_hash: str,
    optimizer: torch.optim.Optimizer | None = None,
    state: CheckpointState | None = None,
) -> Path:
    """Write parameters, optimizer moments and loop state to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    named = list(model.named_parameters())
    params = [p for _, p in named]
    step, moments = _adam_moments(optimizer, params)
    header = {
        "config_hash": config_hash,
        "params": [{"name": name, "shape": list(p.shape)} for name, p in named],
        "optimizer": None
        if optimizer is None
        else {"step": step, "lr": [group["lr"] for group in optimizer.param_groups]},
        "state": (state or CheckpointState()).to_header(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")

    blocks = [p.detach().cpu().numpy() for p in params]
    if optimizer is not None:
        for m, v in moments:
            blocks.extend([m.detach().cpu().numpy(), v.detach().cpu().numpy()])
    with path.open("wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        f.write(blob)
        for block in blocks:
            f.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    logger.debug(f"Wrote checkpoint {path} (iteration {header['state']['iteration']})")
    return path


def read_header(path: Path) -> tuple[dict[str, Any], bytes]:
    """Validate the prefix and return the JSON header and the raw block bytes."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint")
    magic, version, length = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}, expected {VERSION}")
    end = _PREFIX.size + length
    if len(data) < end:
        raise CheckpointError(f"{path}: header length {length} runs past the end of the file")
    try:
        header = json.loads(data[_PREFIX.size : end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from e
    return header, data[end:]


def load_checkpoint(
    path: Path,
    model: torch.nn.Module,
    config_hash: str | None = None,
    optimizer: torch.optim.Optimizer | None = None,
) -> CheckpointState:
    """Restore parameters (and optimizer moments, if given) in place.

    Raises:
        CheckpointError: on a bad prefix, a config hash that differs from
            ``config_hash``, a parameter layout that differs from ``model``, or
            a block section of the wrong length
    """
    header, payload = read_header(path)
    if config_hash is not None and header["config_hash"] != config_hash:
        raise CheckpointError(
            f"{path}: config hash mismatch: checkpoint {header['config_hash']}, current {config_hash}"
        )
    named = list(model.named_parameters())
    layout = [{"name": name, "shape": list(p.shape)} for name, p in named]
    if header["params"] != layout:
        raise CheckpointError(f"{path}: parameter layout does not match the model")

    sizes = [int(np.prod(entry["shape"], dtype=np.int64)) for entry in layout]
    has_moments = header.get("optimizer") is not None
    expected = sum(sizes) * (3 if has_moments else 1) * 8
    if len(payload) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes of parameter data, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8")

    offset = 0

    def take(shape: list[int], size: int) -> torch.Tensor:
        nonlocal offset
        block = values[offset : offset + size].reshape(shape)
        offset += size
        return torch.from_numpy(block.astype(np.float64, copy=True))

    with torch.no_grad():
        for (_, p), entry, size in zip(named, layout, sizes, strict=True):
            p.copy_(take(entry["shape"], size))

    if optimizer is not None and has_moments:
        step = int(header["optimizer"]["step"])
        restored = optimizer.state_dict()
        restored["state"] = {}
        for k, (entry, size) in enumerate(zip(layout, sizes, strict=True)):
            exp_avg, exp_avg_sq = take(entry["shape"], size), take(entry["shape"], size)
            if step > 0:
                restored["state"][k] = {
                    "step": torch.tensor(float(step)),
                    "exp_avg": exp_avg,
                    "exp_avg_sq": exp_avg_sq,
                }
        optimizer.load_state_dict(restored)
    return CheckpointState.from_header(header["state"])
