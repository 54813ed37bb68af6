"""Loss-weight schedules over a training run."""

import math
from dataclasses import dataclass

from maskgraph.config import LossConfig
from maskgraph.errors import ConfigError
from maskgraph.losses import LossWeights


def _log_interp(start: float, end: float, t: float) -> float:
    """Geometric interpolation that returns the endpoints exactly."""
    if t <= 0:
        return start
    if t >= 1:
        return end
    return 10 ** (math.log10(start) + t * (math.log10(end) - math.log10(start)))


@dataclass(frozen=True)
class ScheduleState:
    iteration: int
    total_iterations: int
    lambda_c: float
    lambda_p: float
    lambda_k: float
    alpha: float
    beta: float
    gamma: float

    @property
    def progress(self) -> float:
        return self.iteration / self.total_iterations

    def weights(self, raster: bool = True) -> LossWeights:
        return LossWeights(
            lambda_c=self.lambda_c,
            lambda_p=self.lambda_p if raster else 0.0,
            lambda_k=self.lambda_k,
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
        )


def schedule_weights(iteration: int, total: int, cfg: LossConfig | None = None) -> ScheduleState:
    """Loss weights at ``iteration`` of ``total``.

    With ``t = iteration / total``: the KL weight grows geometrically from its
    start to its end value over the run, the uniform-length weight grows
    geometrically over the first third and then stays at its end value, and
    the elastic and curvature weights decay by ``decay_decades`` powers of ten.
    The Chamfer and pixel weights are constant.

    Raises:
        ConfigError: if ``total < 1`` or ``iteration`` lies outside ``[0, total]``
    """
    cfg = cfg or LossConfig()
    if total < 1:
        raise ConfigError(f"total iterations must be positive, got {total}")
    if not 0 <= iteration <= total:
        raise ConfigError(f"iteration {iteration} lies outside [0, {total}]")
    t = iteration / total
    ramp = min(t / cfg.alpha_ramp_fraction, 1.0) if cfg.alpha_ramp_fraction > 0 else 1.0
    if ramp >= 1.0 - 1e-12:
        ramp = 1.0
    decay = 10 ** (-cfg.decay_decades * t)
    return ScheduleState(
        iteration=iteration,
        total_iterations=total,
        lambda_c=cfg.lambda_c,
        lambda_p=cfg.lambda_p,
        lambda_k=_log_interp(cfg.lambda_k_start, cfg.lambda_k_end, t),
        alpha=_log_interp(cfg.alpha_start, cfg.alpha_end, ramp),
        beta=cfg.beta * decay,
        gamma=cfg.gamma * decay,
    )
