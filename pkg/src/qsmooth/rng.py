"""Counter-based random streams: one independent stream per (seed, trajectory)."""

import numpy as np

GENERATOR_NAME = "Philox"


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def standard_normals(seed: int, steps: int, width: int, stream: int = 0) -> np.ndarray:
    """Standard normal draws of shape ``(steps, width)``; scale by sqrt(dt) for Wiener increments."""
    return make_rng(seed, stream).standard_normal((steps, width))


def coarsen_normals(normals: np.ndarray) -> np.ndarray:
    """Standard normals for a grid with twice the step, driven by the same Brownian path."""
    if normals.shape[0] % 2:
        raise ValueError("need an even number of steps to coarsen")
    return (normals[0::2] + normals[1::2]) / np.sqrt(2.0)
