"""Centered Fourier transforms, sampling masks, and frequency-domain consistency.

Tensors carry the complex pair on a channel axis laid out as (..., 2, H, W);
spectra keep the DC component at the grid center.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ConfigurationError, ShapeMismatchError


def to_complex(x: torch.Tensor) -> torch.Tensor:
    """(..., 2, H, W) real -> (..., H, W) complex."""
    if x.shape[-3] != 2:
        raise ShapeMismatchError(f"expected channel axis of 2 at dim -3, got {tuple(x.shape)}")
    return torch.complex(x[..., 0, :, :], x[..., 1, :, :])


def from_complex(z: torch.Tensor) -> torch.Tensor:
    """(..., H, W) complex -> (..., 2, H, W) real."""
    return torch.stack([z.real, z.imag], dim=-3)


def fft2c(x: torch.Tensor) -> torch.Tensor:
    """Orthonormal centered 2D FFT of a two-channel image."""
    z = torch.fft.ifftshift(to_complex(x), dim=(-2, -1))
    k = torch.fft.fft2(z, norm="ortho")
    return from_complex(torch.fft.fftshift(k, dim=(-2, -1)))


def ifft2c(k: torch.Tensor) -> torch.Tensor:
    """Inverse of fft2c; round-trip is identity to float precision."""
    z = torch.fft.ifftshift(to_complex(k), dim=(-2, -1))
    img = torch.fft.ifft2(z, norm="ortho")
    return from_complex(torch.fft.fftshift(img, dim=(-2, -1)))


def make_mask(shape: tuple[int, int], pattern: str, acceleration: float = 4.0,
              center_fraction: float = 0.08, seed: int = 0) -> np.ndarray:
    """Row-sampling mask with a guaranteed low-frequency band.

    For 'cartesian_lowfreq_random' the central round(center_fraction * H) rows
    are always kept and the remaining budget of round(H / acceleration) rows is
    drawn uniformly at random, reproducibly per seed.
    """
    h, w = shape
    if pattern == "full":
        return np.ones((h, w), dtype=np.float32)
    if pattern == "empty":
        return np.zeros((h, w), dtype=np.float32)
    if pattern != "cartesian_lowfreq_random":
        raise ConfigurationError(f"unknown mask pattern '{pattern}'")
    if not 0.0 < center_fraction < 1.0:
        raise ConfigurationError("center_fraction must lie in (0, 1)")
    num_center = int(round(center_fraction * h))
    num_total = int(round(h / acceleration))
    if num_center > num_total:
        raise ConfigurationError(
            f"center band of {num_center} rows exceeds sampling budget {num_total}")
    start = (h - num_center) // 2
    center_rows = np.arange(start, start + num_center)
    outside = np.setdiff1d(np.arange(h), center_rows)
    rng = np.random.default_rng(seed)
    extra = rng.choice(outside, size=num_total - num_center, replace=False)
    mask = np.zeros((h, w), dtype=np.float32)
    mask[np.concatenate([center_rows, extra])] = 1.0
    return mask


def data_consistency(k_sr: torch.Tensor, k_hr: torch.Tensor,
                     mask: torch.Tensor, blend: float | None = None) -> torch.Tensor:
    """Replace sampled spectrum positions with measured values.

    blend=None is the hard limit (sampled positions take k_hr exactly);
    a finite blend n mixes (k_sr + n*k_hr) / (1 + n) at sampled positions.
    """
    if k_sr.shape != k_hr.shape:
        raise ShapeMismatchError(f"spectra differ: {tuple(k_sr.shape)} vs {tuple(k_hr.shape)}")
    if mask.shape != k_sr.shape[-2:]:
        raise ShapeMismatchError(
            f"mask {tuple(mask.shape)} vs spectrum grid {tuple(k_sr.shape[-2:])}")
    if blend is None:
        sampled = k_hr
    else:
        sampled = (k_sr + blend * k_hr) / (1.0 + blend)
    return mask * sampled + (1.0 - mask) * k_sr


def dc_loss(k_dc: torch.Tensor, k_hr: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all real/imag spectrum entries."""
    if k_dc.shape != k_hr.shape:
        raise ShapeMismatchError(f"spectra differ: {tuple(k_dc.shape)} vs {tuple(k_hr.shape)}")
    return torch.mean((k_dc - k_hr) ** 2)
