"""Decoupled training loop: per step, corrupt with mask noise, denoise under
the mask task, re-feed the sampled prediction under the uniform task, run the
classifier pass on the sampled clean prediction, and update on the weighted
sum of the four losses."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import corpus
from .codec import mask_token, pad_token
from .corruption import NoiseSchedule, kappa
from .net import HourglassDenoiser, NetConfig, TaskFlag, init_model, save_checkpoint
from .objectives import (
    LossBreakdown,
    batch_connection_loss,
    ce_clean_loss,
    classifier_loss,
)


@dataclass
class TrainConfig:
    steps: int = 100
    batch_size: int = 4
    lr_peak: float = 1e-4
    warmup_steps: int = 100
    t_train: int = 1000
    seed: int = 0
    corpus_dir: str = ""
    out_dir: str = ""
    checkpoint_every: int = 100
    w_mask: float = 1.0
    w_uniform: float = 1.0
    w_phi: float = 1.0
    w_connection: float = 1.0
    betas: tuple = (0.9, 0.95)
    weight_decay: float = 0.01
    face_min: int = 0             # curriculum filter on corpus face counts
    face_max: int = 10**9
    ce_corrupted_only: bool = False

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.lr_peak <= 0:
            raise ValueError("lr_peak must be positive")
        self.betas = tuple(self.betas)


def lr_schedule(cfg: TrainConfig, step: int) -> float:
    """Linear warmup to lr_peak over warmup_steps, constant after."""
    if step < cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    return cfg.lr_peak


def pack_batch(items, cond_counts, resolution: int):
    """Pad token sequences to the batch max with PAD; bundle groups and
    condition points."""
    pad = pad_token(resolution)
    lengths = [len(it.tokens) for it in items]
    s_max = max(lengths)
    x1 = np.full((len(items), s_max), pad, dtype=np.int64)
    for row, it in zip(x1, items):
        row[:len(it.tokens)] = it.tokens
    return {
        "x1": torch.from_numpy(x1),
        "lengths": torch.tensor(lengths, dtype=torch.long),
        "groups": [it.groups for it in items],
        "cond_points": [corpus.condition_points(it, cond_counts) for it in items],
    }


def _sample_categorical(logits: torch.Tensor, resolution: int, gen) -> torch.Tensor:
    """Per-position draw over the coordinate codebook (specials excluded)."""
    probs = torch.softmax(logits[..., :resolution].double(), dim=-1)
    flat = probs.reshape(-1, resolution)
    draw = torch.multinomial(flat, 1, generator=gen).reshape(logits.shape[:-1])
    return draw


def draw_fixture(model: HourglassDenoiser, batch, gen, cfg: TrainConfig):
    """Sample everything stochastic for one step (timestep, mask corruption,
    and the two re-fed sequences) so the loss computation is a deterministic
    function of the parameters."""
    sched = NoiseSchedule(t_train=cfg.t_train)
    x1 = batch["x1"]
    lengths = batch["lengths"]
    b, s = x1.shape
    res = model.cfg.resolution
    pad = pad_token(res)
    valid = torch.arange(s)[None, :] < lengths[:, None]

    t_int = torch.randint(0, cfg.t_train + 1, (b,), generator=gen)
    rates = torch.tensor([kappa(sched, float(t) / cfg.t_train) for t in t_int])
    hit = (torch.rand((b, s), generator=gen) < rates[:, None]) & valid
    x_t_mask = torch.where(hit, torch.tensor(mask_token(res)), x1)

    cond_points = np.stack(batch["cond_points"])
    with torch.no_grad():
        cond = model.encode_condition(cond_points)
        out_m = model(x_t_mask, t_int, cond, TaskFlag.mask_task, lengths)
        x_t_uniform = _sample_categorical(out_m.token_logits, res, gen)
        x_t_uniform = torch.where(valid, x_t_uniform, torch.tensor(pad))
        out_u = model(x_t_uniform, t_int, cond, TaskFlag.uniform_task, lengths)
        x_1_uniform = _sample_categorical(out_u.token_logits, res, gen)
        x_1_uniform = torch.where(valid, x_1_uniform, torch.tensor(pad))

    return {
        "x1": x1,
        "lengths": lengths,
        "valid": valid,
        "corrupted": hit,
        "groups": batch["groups"],
        "cond_points": cond_points,
        "t_int": t_int,
        "x_t_mask": x_t_mask,
        "x_t_uniform": x_t_uniform,
        "x_1_uniform": x_1_uniform,
    }


def compute_losses(model: HourglassDenoiser, fixture, cfg: TrainConfig):
    """Differentiable loss terms for a frozen fixture."""
    ce_mask = fixture["corrupted"] if cfg.ce_corrupted_only else fixture["valid"]
    t_int, lengths = fixture["t_int"], fixture["lengths"]
    cond = model.encode_condition(fixture["cond_points"])

    out_m = model(fixture["x_t_mask"], t_int, cond, TaskFlag.mask_task, lengths)
    l_mask = ce_clean_loss(out_m.token_logits, fixture["x1"], ce_mask)

    out_u = model(fixture["x_t_uniform"], t_int, cond, TaskFlag.uniform_task, lengths)
    l_uniform = ce_clean_loss(out_u.token_logits, fixture["x1"], fixture["valid"])
    l_conn = batch_connection_loss(out_u.token_logits, fixture["groups"])

    out_c = model(fixture["x_1_uniform"], t_int, cond, TaskFlag.uniform_task, lengths)
    l_phi = classifier_loss(
        out_c.correctness_logits, fixture["x_1_uniform"], fixture["x1"], fixture["valid"]
    )
    return {"l_mask": l_mask, "l_uniform": l_uniform, "l_phi": l_phi, "l_connection": l_conn}


def train_step(model, optimizer, batch, gen, cfg: TrainConfig, step: int) -> LossBreakdown:
    fixture = draw_fixture(model, batch, gen, cfg)
    losses = compute_losses(model, fixture, cfg)
    objective = (
        cfg.w_mask * losses["l_mask"]
        + cfg.w_uniform * losses["l_uniform"]
        + cfg.w_phi * losses["l_phi"]
        + cfg.w_connection * losses["l_connection"]
    )
    if not torch.isfinite(objective):
        raise RuntimeError(
            "non-finite training objective at step "
            f"{step}: " + ", ".join(f"{k}={float(v)}" for k, v in losses.items())
        )
    lr = lr_schedule(cfg, step)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    objective.backward()
    optimizer.step()
    return LossBreakdown.from_terms(
        losses["l_mask"], losses["l_uniform"], losses["l_phi"], losses["l_connection"]
    )


def metrics_line(step: int, lr: float, bd: LossBreakdown) -> str:
    return (
        f"{step}\t{lr:.10g}\t{bd.l_mask:.10g}\t{bd.l_uniform:.10g}"
        f"\t{bd.l_phi:.10g}\t{bd.l_connection:.10g}\t{bd.total:.10g}"
    )


def parse_metrics(text: str):
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        step, lr, lm, lu, lp, lc, total = line.split("\t")
        out[int(step)] = LossBreakdown(float(lm), float(lu), float(lp), float(lc), float(total))
    return out


def _batch_order(seed: int, n_items: int, batch_size: int, n_steps: int):
    """Deterministic step -> item-index assignment via seeded epoch shuffles."""
    order = []
    epoch = 0
    while len(order) < n_steps:
        perm = np.random.default_rng(seed * 100003 + epoch).permutation(n_items)
        for start in range(0, n_items, batch_size):
            chunk = perm[start:start + batch_size]
            if len(chunk):
                order.append(chunk)
        epoch += 1
    return order[:n_steps]


def _save_train_state(path: str, optimizer, gen, step: int):
    tmp = path + ".tmp"
    torch.save(
        {"optimizer": optimizer.state_dict(), "generator": gen.get_state(), "step": step},
        tmp,
    )
    os.replace(tmp, path)


def fit(net_cfg: NetConfig, cfg: TrainConfig, resume_from: str | None = None):
    """Run the training loop over the corpus. Writes metrics.log, periodic
    checkpoints (ckpt_NNNNNN.tssr plus a .train sidecar with optimizer and RNG
    state for bit-identical resume), and ckpt_final.tssr."""
    items = corpus.load_corpus(cfg.corpus_dir, net_cfg.resolution)
    items = [it for it in items if cfg.face_min <= it.n_faces <= cfg.face_max]
    if not items:
        raise ValueError("corpus is empty after curriculum filtering")
    os.makedirs(cfg.out_dir, exist_ok=True)

    model = init_model(net_cfg, cfg.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr_peak, betas=cfg.betas, weight_decay=cfg.weight_decay
    )
    gen = torch.Generator().manual_seed(cfg.seed)
    start_step = 0
    if resume_from is not None:
        from .net import load_checkpoint

        model = load_checkpoint(resume_from)
        state = torch.load(resume_from + ".train", weights_only=False)
        optimizer = torch.optim.AdamW(
            model.parameters(), lr=cfg.lr_peak, betas=cfg.betas, weight_decay=cfg.weight_decay
        )
        optimizer.load_state_dict(state["optimizer"])
        gen.set_state(state["generator"])
        start_step = state["step"]

    order = _batch_order(cfg.seed, len(items), cfg.batch_size, cfg.steps)
    log_path = os.path.join(cfg.out_dir, "metrics.log")
    mode = "a" if resume_from is not None else "w"
    ckpt_path = None
    with open(log_path, mode) as log:
        if cfg.steps == 0 or start_step >= cfg.steps:
            ckpt_path = os.path.join(cfg.out_dir, "ckpt_final.tssr")
            save_checkpoint(model, ckpt_path)
            _save_train_state(ckpt_path + ".train", optimizer, gen, start_step)
            return ckpt_path
        for step in range(start_step, cfg.steps):
            batch_items = [items[i] for i in order[step]]
            batch = pack_batch(batch_items, net_cfg.cond_points, net_cfg.resolution)
            bd = train_step(model, optimizer, batch, gen, cfg, step)
            log.write(metrics_line(step, lr_schedule(cfg, step), bd) + "\n")
            log.flush()
            done = step + 1
            if done % cfg.checkpoint_every == 0 or done == cfg.steps:
                name = "ckpt_final.tssr" if done == cfg.steps else f"ckpt_{done:06d}.tssr"
                ckpt_path = os.path.join(cfg.out_dir, name)
                save_checkpoint(model, ckpt_path)
                _save_train_state(ckpt_path + ".train", optimizer, gen, done)
    return ckpt_path
