"""Hybrid inference: per step, denoise the masked sequence under the mask
task, treat the sampled prediction as uniform-corrupted input for the uniform
task, then re-mask positions whose classifier confidence falls below sigma.
A schedule-tied commitment floor guarantees progress."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import mask_token


class SamplerError(ValueError):
    pass


@dataclass
class SamplerConfig:
    steps: int = 200          # T
    sigma: float = 0.9        # confidence threshold for keeping a token
    temperature: float = 1.0  # 0 = argmax
    keep_floor: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise SamplerError("steps must be >= 1")
        if not 0.0 < self.sigma < 1.0:
            raise SamplerError("sigma must be in (0,1)")


@dataclass
class SamplerState:
    tokens: np.ndarray        # committed tokens, MASK elsewhere
    committed: np.ndarray     # bool per position
    t_index: int = 0
    trace: list = field(default_factory=list)  # (step, committed_count, mean_confidence)


@dataclass
class FaceCountStrategy:
    """S1: ground-truth count; S2: count biased by a seeded draw in
    [-width, width]; S3: constant count."""
    kind: str                 # s1 | s2 | s3
    n: int = 0
    width: int = 100
    const: int = 2000

    def resolve(self, rng: np.random.Generator, max_faces: int | None = None) -> int:
        if self.kind == "s1":
            n = self.n
        elif self.kind == "s2":
            n = self.n + int(rng.integers(-self.width, self.width + 1))
        elif self.kind == "s3":
            n = self.const
        else:
            raise SamplerError(f"unknown face-count strategy: {self.kind!r}")
        n = max(n, 1)
        if max_faces is not None:
            if self.kind == "s2":
                n = min(n, max_faces)
            elif n > max_faces:
                raise SamplerError(f"face count {n} exceeds max_faces {max_faces}")
        return n


class Denoiser:
    """Model interface the sampler consumes."""

    resolution: int

    def predict(self, tokens: np.ndarray, t: float, flag: str):
        """Returns (token_logits (S,B), correctness_logits (S,))."""
        raise NotImplementedError


class TorchDenoiser(Denoiser):
    """Adapter running a trained hourglass model on one sequence."""

    def __init__(self, model, cond_points: np.ndarray):
        import torch

        self._torch = torch
        self.model = model.eval()
        self.resolution = model.cfg.resolution
        with torch.no_grad():
            self.cond = model.encode_condition(cond_points[None])

    def predict(self, tokens, t, flag):
        from .net import TaskFlag

        torch = self._torch
        t_int = int(round(t * self.model.cfg.t_train))
        task = TaskFlag.mask_task if flag == "mask" else TaskFlag.uniform_task
        with torch.no_grad():
            out = self.model(tokens[None], t_int, self.cond, task)
        return (
            out.token_logits[0].double().numpy(),
            out.correctness_logits[0].double().numpy(),
        )


class PerfectOracle(Denoiser):
    """Stand-in denoiser that knows the target sequence exactly."""

    LOGIT = 50.0

    def __init__(self, target: np.ndarray, resolution: int):
        self.target = np.asarray(target, dtype=np.int64)
        self.resolution = resolution

    def predict(self, tokens, t, flag):
        s = len(self.target)
        logits = np.full((s, self.resolution + 2), -self.LOGIT)
        logits[np.arange(s), self.target] = self.LOGIT
        conf = np.where(tokens == self.target, self.LOGIT, -self.LOGIT)
        return logits, conf


class NoisyOracle(Denoiser):
    """Oracle that corrupts each predicted token with probability p but
    reports truthful confidence about its input."""

    LOGIT = 50.0

    def __init__(self, target: np.ndarray, resolution: int, p: float = 0.2, seed: int = 0):
        self.target = np.asarray(target, dtype=np.int64)
        self.resolution = resolution
        self.p = p
        self.rng = np.random.default_rng(seed)

    def predict(self, tokens, t, flag):
        s = len(self.target)
        pred = self.target.copy()
        bad = self.rng.random(s) < self.p
        wrong = (self.target[bad] + 1 + self.rng.integers(0, self.resolution - 1, bad.sum())) \
            % self.resolution
        pred[bad] = wrong
        logits = np.full((s, self.resolution + 2), -self.LOGIT)
        logits[np.arange(s), pred] = self.LOGIT
        conf = np.where(tokens == self.target, self.LOGIT, -self.LOGIT)
        return logits, conf


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def _sample_tokens(logits: np.ndarray, temperature: float, rng) -> np.ndarray:
    """Per-position categorical draw over coordinate values (specials cut)."""
    res_logits = logits[:, :-2]
    if temperature <= 0.0:
        return res_logits.argmax(axis=1)
    z = res_logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    cum = np.cumsum(p, axis=1)
    u = rng.random(len(p))
    return np.minimum((cum < u[:, None]).sum(axis=1), p.shape[1] - 1)


def init_state(
    n_faces: int,
    cfg: SamplerConfig,
    resolution: int = 1024,
    max_faces: int | None = None,
) -> SamplerState:
    if n_faces < 1:
        raise SamplerError("n_faces must be >= 1")
    if max_faces is not None and n_faces > max_faces:
        raise SamplerError(f"face count {n_faces} exceeds max_faces {max_faces}")
    s = 9 * n_faces
    return SamplerState(
        tokens=np.full(s, mask_token(resolution), dtype=np.int64),
        committed=np.zeros(s, dtype=bool),
    )


def hybrid_step(
    denoiser: Denoiser,
    state: SamplerState,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> SamplerState:
    """One iteration of the mask-denoise / uniform-denoise / re-mask loop.
    Committed tokens never revert."""
    if state.t_index >= cfg.steps:
        raise SamplerError("state is already final")
    t = state.t_index / cfg.steps
    dt = 1.0 / cfg.steps
    final = state.t_index == cfg.steps - 1
    s = len(state.tokens)
    mask = mask_token(denoiser.resolution)

    logits_m, _ = denoiser.predict(state.tokens, t, "mask")
    x1_mask = np.where(state.committed, state.tokens, _sample_tokens(logits_m, cfg.temperature, rng))

    x_t_uniform = x1_mask  # the mask-branch prediction is treated as uniform-corrupted
    logits_u, _ = denoiser.predict(x_t_uniform, t, "uniform")
    x1_uniform = np.where(state.committed, state.tokens, _sample_tokens(logits_u, cfg.temperature, rng))

    if final:
        state.tokens = x1_uniform
        state.committed = np.ones(s, dtype=bool)
        state.t_index += 1
        state.trace.append((state.t_index, s, 1.0))
        return state

    _, corr = denoiser.predict(x1_uniform, t, "uniform")  # classifier pass
    conf = _sigmoid(corr)
    committed = state.committed | (conf >= cfg.sigma)

    if cfg.keep_floor:
        floor = math.ceil((t + dt) * s)
        short = floor - int(committed.sum())
        if short > 0:
            candidates = np.flatnonzero(~committed)
            # top confidence first; ties broken by lower position index
            order = candidates[np.lexsort((candidates, -conf[candidates]))]
            committed[order[:short]] = True

    # x1_uniform already carries the frozen tokens at previously committed positions
    state.tokens = np.where(committed, x1_uniform, mask)
    state.committed = committed
    state.t_index += 1
    state.trace.append((state.t_index, int(committed.sum()), float(conf.mean())))
    return state


def generate(
    denoiser: Denoiser,
    strategy: FaceCountStrategy,
    cfg: SamplerConfig,
    max_faces: int | None = None,
) -> SamplerState:
    """Run the full loop: all-MASK start, cfg.steps hybrid steps on the uniform
    time grid; returns the final state (no MASK left)."""
    rng = np.random.default_rng(cfg.seed)
    n_faces = strategy.resolve(rng, max_faces)
    state = init_state(n_faces, cfg, denoiser.resolution, max_faces)
    for _ in range(cfg.steps):
        state = hybrid_step(denoiser, state, cfg, rng)
    return state


def format_trace(state: SamplerState) -> str:
    return "".join(f"{s}\t{c}\t{m:.6g}\n" for s, c, m in state.trace)
