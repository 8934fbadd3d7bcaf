"""Hourglass denoiser: bidirectional transformer over coordinate tokens with
three resolution levels (coordinate -> vertex -> face), cross-attention back to
the uncompressed encoder states on the way up, multi-level rotary embeddings
driven by (face, vertex, coordinate) index tuples, point-cloud conditioning,
time/task-flag conditioning, a token head, and a correctness-classifier head."""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .codec import codebook_size, mask_token, pad_token, position_tuples


class TaskFlag(Enum):
    mask_task = 0
    uniform_task = 1


CHECKPOINT_MAGIC = b"TSSRCKPT"
CHECKPOINT_VERSION = 1

# rotary frequency ladder bases per index; face indices span up to ~1e4,
# vertex/coordinate indices span {0,1,2}
ROPE_BASES = (10000.0, 100.0, 100.0)


class NetError(ValueError):
    pass


@dataclass
class NetConfig:
    d_model: int = 128
    n_heads: int = 4
    layers_per_level: tuple = (2, 2, 4, 2, 2)  # coord_enc, vertex_enc, face_trunk, vertex_dec, coord_dec
    rope_dim_split: tuple = (16, 8, 8)         # per-head rotary dims for (face, vertex, coordinate)
    resolution: int = 1024
    max_faces: int = 128
    cond_points: int = 256
    t_train: int = 1000
    mlp_ratio: int = 4
    cond_freqs: int = 8

    def __post_init__(self):
        self.layers_per_level = tuple(self.layers_per_level)
        self.rope_dim_split = tuple(self.rope_dim_split)
        if self.d_model % self.n_heads != 0:
            raise NetError("d_model must divide by n_heads")
        if len(self.layers_per_level) != 5:
            raise NetError("layers_per_level needs 5 entries")
        if sum(self.rope_dim_split) != self.head_dim:
            raise NetError("rope_dim_split must sum to the head dimension")
        if any(d % 2 for d in self.rope_dim_split):
            raise NetError("rope_dim_split entries must be even")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def codebook(self) -> int:
        return codebook_size(self.resolution)


@dataclass
class DenoiseOutput:
    token_logits: torch.Tensor       # (b, S, B)
    correctness_logits: torch.Tensor  # (b, S)


# ---------------------------------------------------------------------------
# multi-level rotary embedding

def _rope_angles(tuples: torch.Tensor, split, bases, dtype, device) -> torch.Tensor:
    """Per-position rotation angles, one column per rotary pair; chunks for
    face/vertex/coordinate indices are concatenated."""
    parts = []
    for j, dims in enumerate(split):
        if dims == 0:
            continue
        half = dims // 2
        inv_freq = bases[j] ** (-torch.arange(half, dtype=dtype, device=device) / half)
        idx = tuples[:, j].to(dtype)
        parts.append(idx[:, None] * inv_freq[None, :])
    return torch.cat(parts, dim=-1)  # (S, sum(split)//2)


def apply_multilevel_rope(x: torch.Tensor, tuples: torch.Tensor, split, bases=ROPE_BASES) -> torch.Tensor:
    """Rotate the trailing head dimension of x (..., S, head_dim) chunk-wise:
    the face chunk by face_index, vertex chunk by vertex_index, coordinate
    chunk by coordinate_index."""
    if tuples.shape[0] != x.shape[-2]:
        raise NetError("tuple list length mismatch")
    angles = _rope_angles(tuples, split, bases, x.dtype, x.device)
    cos = torch.cos(angles)
    sin = torch.sin(angles)
    out = torch.empty_like(x)
    off = 0   # feature offset
    aoff = 0  # angle-column offset
    for dims in split:
        if dims == 0:
            continue
        half = dims // 2
        x1 = x[..., off:off + half]
        x2 = x[..., off + half:off + dims]
        c = cos[:, aoff:aoff + half]
        s = sin[:, aoff:aoff + half]
        out[..., off:off + half] = x1 * c - x2 * s
        out[..., off + half:off + dims] = x1 * s + x2 * c
        off += dims
        aoff += half
    return out


# ---------------------------------------------------------------------------
# blocks

class Mlp(nn.Module):
    def __init__(self, dim, ratio):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * ratio)
        self.fc2 = nn.Linear(dim * ratio, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class SelfAttention(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.head_dim
        self.split = cfg.rope_dim_split
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model, bias=False)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model, bias=False)

    def forward(self, x, tuples, key_valid):
        b, s, d = x.shape
        qkv = self.qkv(x).view(b, s, 3, self.n_heads, self.head_dim)
        q, k, v = qkv.unbind(dim=2)
        q = q.transpose(1, 2)  # (b, h, s, hd)
        k = k.transpose(1, 2)
        v = v.transpose(1, 2)
        q = apply_multilevel_rope(q, tuples, self.split)
        k = apply_multilevel_rope(k, tuples, self.split)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if key_valid is not None:
            scores = scores.masked_fill(~key_valid[:, None, None, :], float("-inf"))
        attn = scores.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, s, d)
        return self.proj(out)


class CrossAttention(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.head_dim
        self.q = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        self.kv = nn.Linear(cfg.d_model, 2 * cfg.d_model, bias=False)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model, bias=False)

    def forward(self, x, memory, mem_valid=None):
        b, s, d = x.shape
        m = memory.shape[1]
        q = self.q(x).view(b, s, self.n_heads, self.head_dim).transpose(1, 2)
        kv = self.kv(memory).view(b, m, 2, self.n_heads, self.head_dim)
        k, v = kv.unbind(dim=2)
        k = k.transpose(1, 2)
        v = v.transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if mem_valid is not None:
            scores = scores.masked_fill(~mem_valid[:, None, None, :], float("-inf"))
        attn = scores.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, s, d)
        return self.proj(out)


class EncoderBlock(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = SelfAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.mlp = Mlp(cfg.d_model, cfg.mlp_ratio)

    def forward(self, x, tuples, key_valid):
        x = x + self.attn(self.norm1(x), tuples, key_valid)
        x = x + self.mlp(self.norm2(x))
        return x


class TrunkBlock(nn.Module):
    """Face-level block: self-attention plus cross-attention to the condition."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = SelfAttention(cfg)
        self.norm_x = nn.LayerNorm(cfg.d_model)
        self.cross = CrossAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.mlp = Mlp(cfg.d_model, cfg.mlp_ratio)

    def forward(self, x, tuples, key_valid, cond):
        x = x + self.attn(self.norm1(x), tuples, key_valid)
        x = x + self.cross(self.norm_x(x), cond)
        x = x + self.mlp(self.norm2(x))
        return x


class UpsampleBlock(nn.Module):
    """Cross-attention whose key/value source is the uncompressed encoder
    output at the target level."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.norm = nn.LayerNorm(cfg.d_model)
        self.cross = CrossAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.mlp = Mlp(cfg.d_model, cfg.mlp_ratio)

    def forward(self, x, memory, mem_valid):
        x = x + self.cross(self.norm(x), memory, mem_valid)
        x = x + self.mlp(self.norm2(x))
        return x


def _sinusoid(pos: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=pos.dtype, device=pos.device) / half
    )
    args = pos[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class HourglassDenoiser(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.tok_emb = nn.Embedding(cfg.codebook, d)
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.flag_emb = nn.Embedding(2, d)
        feat = 6 * cfg.cond_freqs  # sin/cos per coordinate per frequency
        self.cond_mlp = nn.Sequential(nn.Linear(feat, d), nn.GELU(), nn.Linear(d, d))
        l0, l1, l2, l3, l4 = cfg.layers_per_level
        self.enc_coord = nn.ModuleList(EncoderBlock(cfg) for _ in range(l0))
        self.enc_vertex = nn.ModuleList(EncoderBlock(cfg) for _ in range(l1))
        self.trunk = nn.ModuleList(TrunkBlock(cfg) for _ in range(l2))
        self.up_vertex = UpsampleBlock(cfg)
        self.dec_vertex = nn.ModuleList(EncoderBlock(cfg) for _ in range(l3))
        self.up_coord = UpsampleBlock(cfg)
        self.dec_coord = nn.ModuleList(EncoderBlock(cfg) for _ in range(l4))
        self.final_norm = nn.LayerNorm(d)
        self.token_head = nn.Linear(d, cfg.codebook)
        self.classifier_head = nn.Linear(d, 1)

    # -- conditioning ------------------------------------------------------

    def encode_condition(self, points) -> torch.Tensor:
        """Per-point Fourier features through a shared perceptron. Resamples
        to cfg.cond_points deterministically (even stride or cyclic repeat)."""
        pts = torch.as_tensor(np.asarray(points), dtype=self._dtype(), device=self._device())
        if pts.dim() == 2:
            pts = pts[None]
        if pts.shape[1] == 0:
            raise NetError("empty condition point cloud")
        n, target = pts.shape[1], self.cfg.cond_points
        if n != target:
            idx = (torch.arange(target, device=pts.device) * n) // target if n > target \
                else torch.arange(target, device=pts.device) % n
            pts = pts[:, idx]
        freqs = (2.0 ** torch.arange(self.cfg.cond_freqs, dtype=pts.dtype, device=pts.device)) * math.pi
        args = pts[..., None] * freqs  # (b, P, 3, F)
        feat = torch.cat([torch.sin(args), torch.cos(args)], dim=-1).flatten(-2)
        return self.cond_mlp(feat)

    def _device(self):
        return next(self.parameters()).device

    def _dtype(self):
        return next(self.parameters()).dtype

    # -- forward -----------------------------------------------------------

    def forward(self, tokens, t_int, cond, flag, lengths=None) -> DenoiseOutput:
        cfg = self.cfg
        tokens = torch.as_tensor(np.asarray(tokens), dtype=torch.long, device=self._device())
        if tokens.dim() == 1:
            tokens = tokens[None]
        b, s = tokens.shape
        if s % 9 != 0:
            raise NetError("sequence length must be a multiple of 9")
        if s > 9 * cfg.max_faces:
            raise NetError("sequence longer than 9 * max_faces")
        pad = pad_token(cfg.resolution)
        if lengths is None:
            lengths = torch.full((b,), s, dtype=torch.long, device=tokens.device)
            is_pad = tokens == pad
            # PAD may only form a suffix
            interior = is_pad[:, :-1] & ~is_pad[:, 1:] if s > 1 else is_pad[:, :0]
            if interior.any():
                raise NetError("PAD token in sequence interior")
            lengths = s - is_pad.sum(dim=1)
        else:
            lengths = torch.as_tensor(lengths, dtype=torch.long, device=tokens.device)
            pos = torch.arange(s, device=tokens.device)
            if (tokens.masked_fill(pos[None, :] >= lengths[:, None], 0) == pad).any():
                raise NetError("PAD token in sequence interior")
        if (lengths % 9).any():
            raise NetError("valid length must be a multiple of 9")

        pos = torch.arange(s, device=tokens.device)
        valid0 = pos[None, :] < lengths[:, None]
        tokens = torch.where(valid0, tokens, torch.full_like(tokens, pad))

        if isinstance(flag, TaskFlag):
            flag = flag.value
        flag_idx = torch.as_tensor(flag, dtype=torch.long, device=tokens.device)
        if flag_idx.dim() == 0:
            flag_idx = flag_idx.expand(b)
        t_int = torch.as_tensor(t_int, dtype=torch.long, device=tokens.device)
        if t_int.dim() == 0:
            t_int = t_int.expand(b)

        dtype = self._dtype()
        t_vec = self.time_mlp(_sinusoid(t_int.to(dtype) / cfg.t_train * 1000.0, cfg.d_model))
        f_vec = self.flag_emb(flag_idx)
        cond_vec = (t_vec + f_vec)[:, None, :]

        tup0 = torch.as_tensor(position_tuples(s), device=tokens.device)
        p1 = torch.arange(s // 3, device=tokens.device)
        tup1 = torch.stack([p1 // 3, p1 % 3, torch.zeros_like(p1)], dim=1)
        p2 = torch.arange(s // 9, device=tokens.device)
        tup2 = torch.stack([p2, torch.zeros_like(p2), torch.zeros_like(p2)], dim=1)
        valid1 = valid0.view(b, s // 3, 3).any(dim=2)
        valid2 = valid0.view(b, s // 9, 9).any(dim=2)

        h = self.tok_emb(tokens) + cond_vec
        for blk in self.enc_coord:
            h = blk(h, tup0, valid0)
        skip0 = h

        h1 = h.view(b, s // 3, 3, -1).mean(dim=2) + cond_vec
        for blk in self.enc_vertex:
            h1 = blk(h1, tup1, valid1)
        skip1 = h1

        h2 = h1.view(b, s // 9, 3, -1).mean(dim=2) + cond_vec
        for blk in self.trunk:
            h2 = blk(h2, tup2, valid2, cond)

        u1 = h2.repeat_interleave(3, dim=1) + skip1 + cond_vec
        u1 = self.up_vertex(u1, skip1, valid1)
        for blk in self.dec_vertex:
            u1 = blk(u1, tup1, valid1)

        u0 = u1.repeat_interleave(3, dim=1) + skip0 + cond_vec
        u0 = self.up_coord(u0, skip0, valid0)
        for blk in self.dec_coord:
            u0 = blk(u0, tup0, valid0)

        u0 = self.final_norm(u0)
        return DenoiseOutput(
            token_logits=self.token_head(u0),
            correctness_logits=self.classifier_head(u0).squeeze(-1),
        )


def init_model(cfg: NetConfig, seed: int) -> HourglassDenoiser:
    """Deterministic initialization given seed."""
    torch.manual_seed(seed)
    return HourglassDenoiser(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, JSON header (config echo + block
# manifest), raw little-endian float32 parameter blocks

def save_checkpoint(model: HourglassDenoiser, path: str) -> None:
    manifest = []
    blobs = []
    offset = 0
    for name, p in model.state_dict().items():
        arr = p.detach().cpu().numpy().astype("<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"config": asdict(model.cfg), "manifest": manifest}).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> HourglassDenoiser:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise NetError("bad checkpoint magic")
    version, header_len = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise NetError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + header_len])
    cfg = NetConfig(**header["config"])
    model = HourglassDenoiser(cfg)
    base = 16 + header_len
    state = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        arr = np.frombuffer(data[start:start + 4 * count], dtype="<f4").reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model
