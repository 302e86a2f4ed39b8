"""Closed-form multiply-accumulate accounting for the configured model.

Counts MACs of learned transforms (convolutions, linears, attention matmuls)
at inference; elementwise work (norms, activations, residuals, interpolation)
is excluded. The attention core is the pair of score/apply matmuls, counted
per window as L^2 * (L/k)^2 * C each.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .config import ModelConfig
from .errors import ConfigurationError


@dataclass
class AccountingReport:
    components: dict[str, int]
    input_shape: tuple[int, int]

    @property
    def total(self) -> int:
        return sum(self.components.values())

    @property
    def attention_core(self) -> int:
        return self.components["attention_core"]


def count_macs(cfg: ModelConfig, input_shape: tuple[int, int],
               include_sampler: bool = True) -> AccountingReport:
    """Analytic MACs for one forward pass on an LR input of the given shape."""
    h, w = input_shape
    if h % cfg.window or w % cfg.window:
        raise ConfigurationError(
            f"input {input_shape} not divisible by window={cfg.window}")
    npix = h * w
    c = cfg.channels
    s = cfg.scale
    k = cfg.reduction
    win = cfg.window
    hidden = cfg.ffn_expansion * c
    latent = cfg.latent_dim
    num_blocks = sum(cfg.blocks_per_layer)

    comp: dict[str, int] = {}
    comp["pixel_embed"] = 9 * 2 * c * npix
    if cfg.use_reference:
        comp["pixel_embed"] += 9 * (2 * s * s) * c * npix
        # fusion: q/k/v/proj linears, full-window cross attention, 2x-wide MLP
        comp["fusion"] = npix * (4 * c * c + 2 * win * win * c + 4 * c * c)

    comp["attention_qkv"] = num_blocks * npix * (c * c + 2 * c * (c // k ** 2))
    comp["attention_core"] = num_blocks * npix * 2 * (win * win // k ** 2) * c
    comp["attention_proj"] = num_blocks * npix * c * c
    comp["ffn"] = num_blocks * npix * (c * 2 * hidden + 9 * 2 * hidden + hidden * c)
    if cfg.use_prior:
        comp["modulation"] = num_blocks * 2 * 2 * latent * c

    comp["recon_head"] = npix * 9 * c * c * s * s + npix * s * s * 9 * c * 2

    if cfg.use_prior and include_sampler:
        comp["condition_encoder"] = _encoder_macs(cfg.latent_channels, 2, npix)
        d = latent
        per_step = (2 * d + 16) * d + 3 * d * d + d * d
        comp["denoiser"] = cfg.diffusion_steps * per_step
    return AccountingReport(comp, input_shape)


def _encoder_macs(chans: int, in_channels: int, npix: int) -> int:
    """Latent encoder: stem, 9 residual blocks with two stride-2 stages, MLP head."""
    total = 9 * in_channels * chans * npix
    block = 2 * 9 * chans * chans
    total += 3 * block * npix          # blocks 1-3 at full resolution
    total += 9 * chans * chans * (npix // 4)   # first downsample conv
    total += 3 * block * (npix // 4)   # blocks 4-6
    total += 9 * chans * chans * (npix // 16)  # second downsample conv
    total += 3 * block * (npix // 16)  # blocks 7-9
    total += chans * 4 * chans + 4 * chans * 4 * chans
    return total


def standard_msa_config(cfg: ModelConfig, window: int | None = None) -> ModelConfig:
    """The same model with an unreduced (k=1) attention at the given window."""
    return replace(cfg, reduction=1, window=window if window is not None else cfg.window)


def sweep(cfg: ModelConfig, input_shape: tuple[int, int],
          reductions=(1, 2, 4), windows=(8, 16, 32)) -> list[dict]:
    """FLOPs table rows over reduction and window sweeps."""
    rows = []
    for win in windows:
        for k in reductions:
            if cfg.channels % k ** 2 or win % k or (win // 2) % k:
                continue
            variant = replace(cfg, reduction=k, window=win)
            report = count_macs(variant, input_shape)
            rows.append({
                "window": win,
                "reduction": k,
                "attention_core_macs": report.attention_core,
                "total_macs": report.total,
            })
    return rows


def param_count(modules) -> int:
    """Total trainable-parameter count over a module or iterable of modules."""
    import torch.nn as nn

    if isinstance(modules, nn.Module):
        modules = [modules]
    return sum(p.numel() for m in modules for p in m.parameters())
