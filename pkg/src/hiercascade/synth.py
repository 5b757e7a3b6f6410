"""Synthetic paired data: two noisy linear views of shared latent factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class SynthConfig:
    pairs: int
    d_raw: int
    latent: int = 16
    noise: float = 0.0
    seed: int = 0
    identical_views: bool = False

    def __post_init__(self) -> None:
        if self.pairs < 1 or self.d_raw < 1 or self.latent < 1:
            raise UsageError("pairs, d_raw and latent must be positive")
        if not self.noise >= 0:
            raise UsageError("noise must be non-negative")


@dataclass(frozen=True)
class SynthDataset:
    queries: np.ndarray
    galleries: np.ndarray
    latent: np.ndarray
    mix_query: np.ndarray
    mix_gallery: np.ndarray

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.queries.shape[0])

    @property
    def truth(self) -> np.ndarray:
        """Ground-truth gallery id of each query (the diagonal)."""
        return self.ids


def generate_pairs(cfg: SynthConfig) -> SynthDataset:
    """Draw ``pairs`` latent vectors on the unit sphere and map each through
    a per-side random mixing matrix, plus isotropic Gaussian noise.

    Unit-norm latents keep the matched pair the unique best inner-product
    match once the mixing is undone, so the noiseless task is separable.
    """
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal((cfg.pairs, cfg.latent))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    scale = 1.0 / np.sqrt(cfg.latent)
    a_q = rng.standard_normal((cfg.d_raw, cfg.latent)) * scale
    a_g = a_q if cfg.identical_views else rng.standard_normal((cfg.d_raw, cfg.latent)) * scale
    eps_q = rng.standard_normal((cfg.pairs, cfg.d_raw))
    eps_g = rng.standard_normal((cfg.pairs, cfg.d_raw))
    q = z @ a_q.T + cfg.noise * eps_q
    g = z @ a_g.T + cfg.noise * eps_g
    # storage is float32; round here so in-memory and on-disk data agree
    q = q.astype(np.float32).astype(np.float64)
    g = g.astype(np.float32).astype(np.float64)
    return SynthDataset(q, g, z, a_q, a_g)
