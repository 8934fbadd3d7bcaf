"""Synthetic corpus plumbing: line-oriented manifest (`kind params seed` per
mesh), corpus build (OBJ + token dump + group index per entry), and loading
for training."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import codec, geometry


@dataclass
class ManifestEntry:
    kind: str
    params: dict
    seed: int


@dataclass
class CorpusItem:
    index: int
    entry: ManifestEntry
    mesh: geometry.Mesh              # normalized continuous mesh
    quantized: geometry.QuantizedMesh
    tokens: np.ndarray
    groups: codec.VertexGroups

    @property
    def n_faces(self) -> int:
        return len(self.tokens) // codec.TOKENS_PER_FACE


def format_params(params: dict) -> str:
    if not params:
        return "-"
    return ",".join(f"{k}={v}" for k, v in sorted(params.items()))


def parse_params(text: str) -> dict:
    if text == "-":
        return {}
    out = {}
    for part in text.split(","):
        k, _, v = part.partition("=")
        try:
            out[k] = int(v)
        except ValueError:
            out[k] = float(v)
    return out


def write_manifest(entries, path: str) -> None:
    with open(path, "w") as f:
        for e in entries:
            f.write(f"{e.kind} {format_params(e.params)} {e.seed}\n")


def read_manifest(path: str):
    entries = []
    with open(path) as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            kind, params, seed = line.split()
            entries.append(ManifestEntry(kind, parse_params(params), int(seed)))
    return entries


def default_manifest(count: int, seed: int = 0):
    """Mixed-kind manifest spanning roughly 6..128 faces."""
    rng = np.random.default_rng(seed)
    recipes = [
        ("box", {}),
        ("pyramid", {}),
        ("prism", {}),
        ("icosphere", {"subdiv": 0}),
        ("icosphere", {"subdiv": 1}),
        ("grid-relief", {"n": 2}),
        ("grid-relief", {"n": 3}),
        ("grid-relief", {"n": 4}),
        ("grid-relief", {"n": 6}),
        ("grid-relief", {"n": 8}),
    ]
    entries = []
    for i in range(count):
        kind, params = recipes[i % len(recipes)]
        entries.append(ManifestEntry(kind, dict(params), int(rng.integers(0, 2**31))))
    return entries


def prepare_item(entry: ManifestEntry, index: int, resolution: int) -> CorpusItem:
    mesh = geometry.gen_synthetic(entry.kind, entry.params, entry.seed)
    mesh = geometry.normalize_mesh(mesh)
    q = geometry.canonical_order(geometry.quantize(mesh, resolution))
    tokens = codec.tokenize(q)
    groups = codec.shared_vertex_groups(q)
    return CorpusItem(index, entry, mesh, q, tokens, groups)


def build_corpus(entries, out_dir: str, resolution: int = geometry.DEFAULT_RESOLUTION):
    """Write manifest.txt plus mesh_NNNN.obj/.tok/.grp per entry."""
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(entries, os.path.join(out_dir, "manifest.txt"))
    items = []
    for i, e in enumerate(entries):
        item = prepare_item(e, i, resolution)
        stem = os.path.join(out_dir, f"mesh_{i:04d}")
        with open(stem + ".obj", "wb") as f:
            f.write(geometry.write_obj(item.mesh))
        with open(stem + ".tok", "wb") as f:
            f.write(codec.write_token_dump(item.tokens))
        with open(stem + ".grp", "wb") as f:
            f.write(codec.write_group_index(item.groups))
        items.append(item)
    return items


def load_corpus(corpus_dir: str, resolution: int = geometry.DEFAULT_RESOLUTION):
    entries = read_manifest(os.path.join(corpus_dir, "manifest.txt"))
    return [prepare_item(e, i, resolution) for i, e in enumerate(entries)]


def condition_points(item: CorpusItem, count: int) -> np.ndarray:
    """Deterministic point-cloud condition for a corpus item."""
    pc = geometry.sample_surface(item.mesh, count, seed=item.entry.seed)
    return pc.points
