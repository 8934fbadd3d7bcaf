import numpy as np
import pytest
import torch

from meshdiff import codec, corpus, geometry
from meshdiff.net import NetConfig, init_model


@pytest.fixture(scope="session")
def small_corpus_items():
    """A handful of prepared synthetic meshes at full resolution."""
    entries = corpus.default_manifest(10, seed=42)
    return [corpus.prepare_item(e, i, 1024) for i, e in enumerate(entries)]


@pytest.fixture(scope="session")
def box_quantized():
    mesh = geometry.normalize_mesh(geometry.gen_synthetic("box", {}, 7))
    return geometry.canonical_order(geometry.quantize(mesh, 1024))


def toy_net_config(**overrides):
    """Sub-10k-parameter config used for gradient checks."""
    base = dict(
        d_model=8,
        n_heads=2,
        layers_per_level=(1, 1, 1, 1, 1),
        rope_dim_split=(2, 2, 0),
        resolution=8,
        max_faces=16,
        cond_points=8,
        cond_freqs=2,
    )
    base.update(overrides)
    return NetConfig(**base)


def small_net_config(**overrides):
    """Fast but structurally complete config for behavioural tests."""
    base = dict(
        d_model=32,
        n_heads=2,
        layers_per_level=(1, 1, 2, 1, 1),
        rope_dim_split=(8, 4, 4),
        resolution=64,
        max_faces=32,
        cond_points=16,
        cond_freqs=4,
    )
    base.update(overrides)
    return NetConfig(**base)


def toy_corpus_items(resolution, count=2, seed=1):
    entries = corpus.default_manifest(count, seed=seed)
    return [corpus.prepare_item(e, i, resolution) for i, e in enumerate(entries)]
