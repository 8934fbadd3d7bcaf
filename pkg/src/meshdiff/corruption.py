"""Forward diffusion: noise schedule kappa and the mask/uniform corruption
kernels. t=0 is pure noise, t=1 is clean; kappa(t) is the per-token
replacement probability."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import mask_token, pad_token


class CorruptionError(ValueError):
    pass


@dataclass
class NoiseSchedule:
    kind: str = "linear"
    t_train: int = 1000  # integer timestep range; t = t_int / t_train

    def __post_init__(self):
        if self.kind != "linear":
            raise CorruptionError(f"unknown schedule kind: {self.kind!r}")


@dataclass
class CorruptionResult:
    x_t: np.ndarray
    corrupted_positions: np.ndarray  # sorted offsets
    t: float


def kappa(sched: NoiseSchedule, t: float) -> float:
    """Replacement probability at time t in [0,1]; linear: 1 - t."""
    if not 0.0 <= t <= 1.0:
        raise CorruptionError(f"t outside [0,1]: {t}")
    return 1.0 - t


def corrupt(
    x1: np.ndarray,
    t: float,
    kind: str,
    seed: int,
    resolution: int,
    sched: NoiseSchedule | None = None,
) -> CorruptionResult:
    """Independently replace each non-PAD token with probability kappa(t);
    mask kind writes MASK, uniform kind draws from [0, resolution)."""
    if kind not in ("mask", "uniform"):
        raise CorruptionError(f"unknown corruption kind: {kind!r}")
    sched = sched or NoiseSchedule()
    x1 = np.asarray(x1, dtype=np.int64).reshape(-1)
    pad = pad_token(resolution)
    rate = kappa(sched, t)
    rng = np.random.default_rng(seed)
    hit = (rng.random(len(x1)) < rate) & (x1 != pad)
    x_t = x1.copy()
    if kind == "mask":
        x_t[hit] = mask_token(resolution)
    else:
        x_t[hit] = rng.integers(0, resolution, size=int(hit.sum()))
    return CorruptionResult(x_t, np.flatnonzero(hit), t)
