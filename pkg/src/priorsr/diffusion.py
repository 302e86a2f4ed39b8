"""DDPM over the compact latent: schedule, forward corruption, reverse sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise tables, 1-indexed via the accessors."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.steps:
            raise ConfigurationError(f"step t={t} outside 1..{self.steps}")

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self._check(t)
        return float(self.alpha_bars[t - 1])


def make_schedule(steps: int, beta_start: float = 0.1,
                  beta_end: float = 0.99) -> DiffusionSchedule:
    """Linearly spaced betas; the single-step schedule takes the endpoint so the
    terminal state stays noise-dominated."""
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError("betas must satisfy 0 < beta_start <= beta_end < 1")
    if steps == 1:
        betas = np.array([beta_end], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if math.sqrt(alpha_bars[-1]) > 0.1 + 1e-12:
        raise ConfigurationError(
            f"schedule is not noise-dominated: sqrt(alpha_bar_T)="
            f"{math.sqrt(alpha_bars[-1]):.4f} > 0.1")
    return DiffusionSchedule(betas, alphas, alpha_bars)


def q_sample(z: torch.Tensor, t: int, eps: torch.Tensor,
             schedule: DiffusionSchedule) -> torch.Tensor:
    """Forward corruption: sqrt(abar_t) * z + sqrt(1 - abar_t) * eps."""
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar) * z + math.sqrt(1.0 - abar) * eps


def time_embedding(t: int, dim: int = 16, device=None,
                   dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal embedding of the integer step index."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, device=device,
                                                        dtype=dtype) / (half - 1))
    angles = t * freqs
    return torch.cat([angles.sin(), angles.cos()])


class NoisePredictor(nn.Module):
    """Five-linear-layer network predicting the noise in a corrupted latent."""

    TIME_DIM = 16

    def __init__(self, latent_dim):
        super().__init__()
        width = latent_dim
        self.net = nn.Sequential(
            nn.Linear(2 * latent_dim + self.TIME_DIM, width), nn.SiLU(),
            nn.Linear(width, width), nn.SiLU(),
            nn.Linear(width, width), nn.SiLU(),
            nn.Linear(width, width), nn.SiLU(),
            nn.Linear(width, latent_dim),
        )

    def forward(self, z_t, cond, t):
        emb = time_embedding(t, self.TIME_DIM, device=z_t.device, dtype=z_t.dtype)
        emb = emb.expand(z_t.shape[0], -1)
        return self.net(torch.cat([z_t, cond, emb], dim=1))


def denoise_step(z_t: torch.Tensor, cond: torch.Tensor, t: int,
                 schedule: DiffusionSchedule, model: nn.Module,
                 eta: torch.Tensor | None = None) -> torch.Tensor:
    """One reverse step from z_t to z_{t-1}; eta is the injected sampling noise
    (forced to zero at t=1 so the final step is deterministic)."""
    alpha = schedule.alpha(t)
    abar = schedule.alpha_bar(t)
    eps_pred = model(z_t, cond, t)
    mean = (z_t - (1.0 - alpha) / math.sqrt(1.0 - abar) * eps_pred) / math.sqrt(alpha)
    if t == 1 or eta is None:
        return mean
    return mean + math.sqrt(1.0 - alpha) * eta


def sample_prior(cond: torch.Tensor, schedule: DiffusionSchedule, model: nn.Module,
                 seed: int | None = None,
                 generator: torch.Generator | None = None) -> torch.Tensor:
    """Draw z_T from a unit Gaussian and run the full reverse chain."""
    if generator is None:
        generator = torch.Generator(device=cond.device)
        generator.manual_seed(0 if seed is None else seed)
    shape = cond.shape
    z = torch.randn(shape, generator=generator, device=cond.device, dtype=cond.dtype)
    for t in range(schedule.steps, 0, -1):
        eta = None
        if t > 1:
            eta = torch.randn(shape, generator=generator, device=cond.device,
                              dtype=cond.dtype)
        z = denoise_step(z, cond, t, schedule, model, eta)
    return z


def diff_loss(z_hat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over latent coordinates."""
    if z_hat.shape != z.shape:
        raise ConfigurationError(
            f"latent shapes differ: {tuple(z_hat.shape)} vs {tuple(z.shape)}")
    return (z_hat - z).abs().mean()
