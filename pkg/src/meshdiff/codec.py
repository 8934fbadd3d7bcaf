"""Token codec: flatten quantized meshes into coordinate token sequences and
back, shared-vertex group indexing, positional tuples, and the binary dump
formats for tokens and group indexes."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import QuantizedMesh, canonical_order

N_SPECIALS = 2  # MASK, PAD
TOKENS_PER_FACE = 9

TOKEN_MAGIC = b"TSSRTOK1"
GROUP_MAGIC = b"TSSRGRP1"


class CodecError(ValueError):
    pass


def mask_token(resolution: int) -> int:
    return resolution


def pad_token(resolution: int) -> int:
    return resolution + 1


def codebook_size(resolution: int) -> int:
    return resolution + N_SPECIALS


@dataclass
class VertexGroups:
    """Occurrence groups of shared vertices: each group lists the token start
    offsets (offset of the x token) of every face-slot using that vertex."""

    groups: list  # list of int arrays, each >= 2 offsets, all offsets % 3 == 0


@dataclass
class DetokenizeResult:
    mesh: QuantizedMesh
    dropped_faces: int


def tokenize(q: QuantizedMesh) -> np.ndarray:
    """Flatten to [v11x, v11y, v11z, ..., vN3z]; length 9N. Input must be
    canonical (verified by re-canonicalizing)."""
    canon = canonical_order(q)
    if (
        len(canon.vertices) != len(q.vertices)
        or len(canon.faces) != len(q.faces)
        or not np.array_equal(canon.vertices, q.vertices)
        or not np.array_equal(canon.faces, q.faces)
    ):
        raise CodecError("mesh is not in canonical order")
    if len(q.faces) == 0:
        return np.zeros(0, dtype=np.int64)
    return q.vertices[q.faces].reshape(-1).astype(np.int64)


def detokenize(tokens: np.ndarray, resolution: int) -> DetokenizeResult:
    """Rebuild a QuantizedMesh from a clean token sequence: strip the PAD
    suffix, group 9-token blocks into faces, merge identical vertex triples,
    drop faces left with repeated vertices."""
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    pad = pad_token(resolution)
    n = len(tokens)
    while n > 0 and tokens[n - 1] == pad:
        n -= 1
    tokens = tokens[:n]
    if np.any(tokens == pad):
        raise CodecError("PAD token in sequence interior")
    if np.any(tokens == mask_token(resolution)):
        raise CodecError("incomplete sequence (MASK present)")
    if np.any((tokens < 0) | (tokens >= resolution)):
        raise CodecError("token outside coordinate codebook")
    if len(tokens) % TOKENS_PER_FACE != 0:
        raise CodecError("sequence length not a multiple of 9")
    triples = tokens.reshape(-1, 3)
    vert_index: dict = {}
    verts = []
    idx = np.empty(len(triples), dtype=np.int64)
    for i, t in enumerate(map(tuple, triples)):
        j = vert_index.get(t)
        if j is None:
            j = len(verts)
            vert_index[t] = j
            verts.append(t)
        idx[i] = j
    faces = idx.reshape(-1, 3)
    dropped = 0
    if len(faces):
        a, b, c = faces.T
        keep = (a != b) & (b != c) & (a != c)
        dropped = int((~keep).sum())
        faces = faces[keep]
    mesh = QuantizedMesh(np.array(verts, dtype=np.int64).reshape(-1, 3), faces, resolution)
    return DetokenizeResult(mesh, dropped)


def shared_vertex_groups(q: QuantizedMesh) -> VertexGroups:
    """One group per quantized vertex used by >= 2 face-slots, listing token
    start offsets 9*face + 3*slot; groups sorted by first offset."""
    occurrences: dict = {}
    for f, face in enumerate(q.faces):
        for slot in range(3):
            key = tuple(q.vertices[face[slot]])
            occurrences.setdefault(key, []).append(TOKENS_PER_FACE * f + 3 * slot)
    groups = [np.array(v, dtype=np.int64) for v in occurrences.values() if len(v) >= 2]
    groups.sort(key=lambda g: int(g[0]))
    return VertexGroups(groups)


def position_tuples(length: int) -> np.ndarray:
    """(face_index, vertex_index, coordinate_index) for each flat offset."""
    if length < 0:
        raise CodecError("negative length")
    p = np.arange(length, dtype=np.int64)
    return np.column_stack([p // 9, (p % 9) // 3, p % 3])


# ---------------------------------------------------------------------------
# dump formats

def write_token_dump(tokens: np.ndarray) -> bytes:
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if len(tokens) and (tokens.min() < 0 or tokens.max() > 0xFFFF):
        raise CodecError("token out of u16 range")
    out = bytearray(TOKEN_MAGIC)
    out += struct.pack("<I", len(tokens))
    out += tokens.astype("<u2").tobytes()
    return bytes(out)


def read_token_dump(data: bytes) -> np.ndarray:
    if data[:8] != TOKEN_MAGIC:
        raise CodecError("bad token dump magic")
    (count,) = struct.unpack_from("<I", data, 8)
    body = data[12:12 + 2 * count]
    if len(body) != 2 * count:
        raise CodecError("truncated token dump")
    return np.frombuffer(body, dtype="<u2").astype(np.int64)


def write_group_index(groups: VertexGroups) -> bytes:
    out = bytearray(GROUP_MAGIC)
    out += struct.pack("<I", len(groups.groups))
    for g in groups.groups:
        out += struct.pack("<I", len(g))
        out += np.asarray(g, dtype="<u4").tobytes()
    return bytes(out)


def read_group_index(data: bytes) -> VertexGroups:
    if data[:8] != GROUP_MAGIC:
        raise CodecError("bad group index magic")
    (count,) = struct.unpack_from("<I", data, 8)
    pos = 12
    groups = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise CodecError("truncated group index")
        (size,) = struct.unpack_from("<I", data, pos)
        pos += 4
        end = pos + 4 * size
        if end > len(data):
            raise CodecError("truncated group index")
        groups.append(np.frombuffer(data[pos:end], dtype="<u4").astype(np.int64))
        pos = end
    return VertexGroups(groups)
