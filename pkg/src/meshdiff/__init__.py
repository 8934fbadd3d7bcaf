"""Discrete-diffusion mesh generation: tokenize quantized triangle meshes,
train a hierarchical bidirectional denoiser under decoupled mask/uniform
objectives with a shared-vertex connection loss, and generate meshes by
iterative confidence-gated denoising."""

__version__ = "0.1.0"
