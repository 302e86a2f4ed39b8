"""Large-window transformer decoder guided by a compact latent vector.

Queries keep the full window resolution while keys/values are channel-reduced
and then regrouped k x k space-to-depth inside each window, shrinking the
key/value token count by k^2 at unchanged channel width. A learned bias table
indexed by fine-query/coarse-key displacements replaces the usual square
relative position table.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .errors import ConfigurationError, ShapeMismatchError
from .prior import pixel_unshuffle


# ------------------------------------------------------------- window utils

def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nW, window * window, C) in row-major window order."""
    b, h, w, c = x.shape
    x = x.view(b, h // window, window, w // window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous()
    return x.view(-1, window * window, c)


def window_merge(windows: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of window_partition back to (B, H, W, C)."""
    b = windows.shape[0] // ((h // window) * (w // window))
    x = windows.view(b, h // window, w // window, window, window, -1)
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous()
    return x.view(b, h, w, -1)


def pad_to_window(x: torch.Tensor, window: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad (B, C, H, W) up to the next window multiple; returns original size."""
    h, w = x.shape[-2:]
    pad_h = (window - h % window) % window
    pad_w = (window - w % window) % window
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
    return x, (h, w)


def shifted_window_mask(h: int, w: int, window: int, shift: int, reduction: int,
                        device=None, dtype=torch.float32) -> torch.Tensor:
    """(nW, L^2, (L/k)^2) additive mask blocking attention across rolled regions."""
    img = torch.zeros(1, h, w, 1, device=device)
    slices = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    region = 0
    for hs in slices:
        for ws in slices:
            img[:, hs, ws, :] = region
            region += 1
    fine = window_partition(img, window).squeeze(-1)
    coarse = window_partition(img[:, ::reduction, ::reduction, :],
                              window // reduction).squeeze(-1)
    diff = fine.unsqueeze(2) - coarse.unsqueeze(1)
    return torch.where(diff != 0, torch.tensor(-100.0, device=device, dtype=dtype),
                       torch.tensor(0.0, device=device, dtype=dtype))


# -------------------------------------------------------------- positional

def relative_position_index(window: int, reduction: int) -> torch.Tensor:
    """Index map (L^2, (L/k)^2) into the doubled-displacement bias table.

    Key positions sit at the centers of the k x k patches; displacements are
    doubled so half-integer centers index integers.
    """
    lk = window // reduction
    q = np.arange(window, dtype=np.float64)
    centers = np.arange(lk, dtype=np.float64) * reduction + (reduction - 1) / 2.0
    rel = np.rint(2.0 * (q[:, None] - centers[None, :])).astype(np.int64)
    span = 4 * window - 2 * reduction - 1
    rel += 2 * window - reduction - 1
    index = rel[:, None, :, None] * span + rel[None, :, None, :]
    return torch.from_numpy(index.reshape(window * window, lk * lk))


def relative_bias_span(window: int, reduction: int) -> int:
    return 4 * window - 2 * reduction - 1


# ----------------------------------------------------------------- modules

class PriorModulation(nn.Module):
    """Channel-wise scale/shift of layer-normalized features, driven by the latent.

    With the prior disabled this is a plain (affine-free) layer norm.
    """

    def __init__(self, channels, latent_dim, use_prior=True):
        super().__init__()
        self.channels = channels
        self.use_prior = use_prior
        if use_prior:
            self.scale = nn.Linear(latent_dim, channels)
            self.shift = nn.Linear(latent_dim, channels)
            nn.init.ones_(self.scale.bias)
            nn.init.zeros_(self.shift.bias)

    def forward(self, x, z=None):
        normed = F.layer_norm(x.permute(0, 2, 3, 1), (self.channels,))
        normed = normed.permute(0, 3, 1, 2)
        if not self.use_prior:
            return normed
        if z is None:
            raise ConfigurationError("modulation requires a latent vector when the prior is enabled")
        gamma = self.scale(z)[:, :, None, None]
        delta = self.shift(z)[:, :, None, None]
        return gamma * normed + delta


class WindowAttention(nn.Module):
    """Windowed attention with k x k space-to-depth reduced keys/values."""

    def __init__(self, channels, heads, window, reduction, qkv_bias=True):
        super().__init__()
        if channels % heads:
            raise ConfigurationError(f"channels={channels} not divisible by heads={heads}")
        if channels % reduction ** 2:
            raise ConfigurationError(
                f"channels={channels} not divisible by reduction^2={reduction ** 2}")
        if window % reduction:
            raise ConfigurationError(
                f"window={window} not divisible by reduction={reduction}")
        self.heads = heads
        self.window = window
        self.reduction = reduction
        self.head_dim = channels // heads
        reduced = channels // reduction ** 2
        self.q = nn.Linear(channels, channels, bias=qkv_bias)
        # key bias is invariant under softmax, so it would never receive gradient
        self.k = nn.Linear(channels, reduced, bias=False)
        self.v = nn.Linear(channels, reduced, bias=qkv_bias)
        self.proj = nn.Linear(channels, channels, bias=qkv_bias)

    def _regroup(self, tokens):
        # (N, L^2, C/k^2) -> (N, (L/k)^2, C) by k x k space-to-depth per window
        n, _, c = tokens.shape
        grid = tokens.view(n, self.window, self.window, c).permute(0, 3, 1, 2)
        grid = F.pixel_unshuffle(grid, self.reduction)
        return grid.flatten(2).transpose(1, 2)

    def forward(self, x, bias, shift=0, attn_mask=None, return_attn=False):
        b, c, h, w = x.shape
        if shift:
            x = torch.roll(x, shifts=(-shift, -shift), dims=(2, 3))
        tokens = window_partition(x.permute(0, 2, 3, 1), self.window)
        n, l2, _ = tokens.shape
        lk2 = (self.window // self.reduction) ** 2

        q = self.q(tokens)
        k = self._regroup(self.k(tokens))
        v = self._regroup(self.v(tokens))
        q = q.view(n, l2, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(n, lk2, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(n, lk2, self.heads, self.head_dim).transpose(1, 2)

        attn = (q @ k.transpose(-2, -1)) * self.head_dim ** -0.5
        attn = attn + bias.unsqueeze(0)
        if attn_mask is not None:
            num_windows = attn_mask.shape[0]
            attn = attn.view(b, num_windows, self.heads, l2, lk2) \
                + attn_mask.unsqueeze(0).unsqueeze(2)
            attn = attn.view(n, self.heads, l2, lk2)
        attn = attn.softmax(dim=-1)

        out = (attn @ v).transpose(1, 2).reshape(n, l2, c)
        out = self.proj(out)
        out = window_merge(out, self.window, h, w).permute(0, 3, 1, 2)
        if shift:
            out = torch.roll(out, shifts=(shift, shift), dims=(2, 3))
        if return_attn:
            return out, attn
        return out


class GatedConvFFN(nn.Module):
    """Gated feed-forward: two 1x1-conv + depthwise-3x3 paths, GELU gate, 1x1 out."""

    def __init__(self, channels, expansion):
        super().__init__()
        hidden = channels * expansion
        self.project_in = nn.Conv2d(channels, 2 * hidden, 1)
        self.dwconv = nn.Conv2d(2 * hidden, 2 * hidden, 3, padding=1, groups=2 * hidden)
        self.project_out = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        gate, value = self.dwconv(self.project_in(x)).chunk(2, dim=1)
        return self.project_out(F.gelu(gate) * value)


class PLWBlock(nn.Module):
    def __init__(self, channels, latent_dim, heads, window, reduction, shift,
                 expansion, use_prior):
        super().__init__()
        self.shift = shift
        self.mod_attn = PriorModulation(channels, latent_dim, use_prior)
        self.attn = WindowAttention(channels, heads, window, reduction)
        self.mod_ffn = PriorModulation(channels, latent_dim, use_prior)
        self.ffn = GatedConvFFN(channels, expansion)

    def forward(self, x, z, bias, attn_mask):
        x = x + self.attn(self.mod_attn(x, z), bias, self.shift,
                          attn_mask if self.shift else None)
        x = x + self.ffn(self.mod_ffn(x, z))
        return x


class PLWLayer(nn.Module):
    """A stack of blocks sharing one bias table; odd blocks shift windows by L/2."""

    def __init__(self, channels, latent_dim, num_blocks, heads, window, reduction,
                 expansion, use_prior):
        super().__init__()
        self.window = window
        self.reduction = reduction
        span = relative_bias_span(window, reduction)
        self.bias_table = nn.Parameter(torch.zeros(span * span, heads))
        nn.init.trunc_normal_(self.bias_table, std=0.02)
        self.register_buffer("bias_index",
                             relative_position_index(window, reduction),
                             persistent=False)
        self.blocks = nn.ModuleList([
            PLWBlock(channels, latent_dim, heads, window, reduction,
                     shift=0 if i % 2 == 0 else window // 2,
                     expansion=expansion, use_prior=use_prior)
            for i in range(num_blocks)
        ])

    def materialize_bias(self):
        l2, lk2 = self.bias_index.shape
        bias = self.bias_table[self.bias_index.view(-1)]
        return bias.view(l2, lk2, -1).permute(2, 0, 1)

    def forward(self, x, z=None):
        h, w = x.shape[-2:]
        bias = self.materialize_bias()
        shift_ok = min(h, w) > self.window
        attn_mask = None
        if shift_ok and any(b.shift for b in self.blocks):
            attn_mask = shifted_window_mask(h, w, self.window, self.window // 2,
                                            self.reduction, device=x.device,
                                            dtype=x.dtype)
        for block in self.blocks:
            if block.shift and not shift_ok:
                x = x + block.attn(block.mod_attn(x, z), bias, 0, None)
                x = x + block.ffn(block.mod_ffn(x, z))
            else:
                x = block(x, z, bias, attn_mask)
        return x


class PixelEmbed(nn.Module):
    """Lift both contrasts to C channels on the LR grid."""

    def __init__(self, channels, scale, use_reference=True):
        super().__init__()
        self.scale = scale
        self.use_reference = use_reference
        self.lr_proj = nn.Conv2d(2, channels, 3, padding=1)
        if use_reference:
            self.ref_proj = nn.Conv2d(2 * scale * scale, channels, 3, padding=1)

    def forward(self, lr, ref=None):
        f_lr = self.lr_proj(lr)
        if not self.use_reference:
            return f_lr, None
        if ref is None:
            raise ShapeMismatchError("reference image required when fusion is enabled")
        if ref.shape[-2] != lr.shape[-2] * self.scale or ref.shape[-1] != lr.shape[-1] * self.scale:
            raise ShapeMismatchError(
                f"reference {tuple(ref.shape[-2:])} is not {self.scale}x LR "
                f"{tuple(lr.shape[-2:])}")
        f_ref = self.ref_proj(pixel_unshuffle(ref, self.scale))
        return f_lr, f_ref


class CrossContrastFusion(nn.Module):
    """One windowed cross-attention layer: LR queries attend into reference tokens."""

    def __init__(self, channels, heads, window):
        super().__init__()
        self.heads = heads
        self.window = window
        self.head_dim = channels // heads
        self.norm_q = nn.LayerNorm(channels)
        self.norm_kv = nn.LayerNorm(channels)
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(channels, channels, bias=False)
        self.v = nn.Linear(channels, channels)
        self.proj = nn.Linear(channels, channels)
        self.norm_ffn = nn.LayerNorm(channels)
        self.ffn = nn.Sequential(
            nn.Linear(channels, 2 * channels), nn.GELU(),
            nn.Linear(2 * channels, channels))

    def forward(self, f_lr, f_ref):
        if f_lr.shape != f_ref.shape:
            raise ShapeMismatchError(
                f"fusion inputs differ: {tuple(f_lr.shape)} vs {tuple(f_ref.shape)}")
        b, c, h, w = f_lr.shape
        xq = window_partition(f_lr.permute(0, 2, 3, 1), self.window)
        xkv = window_partition(f_ref.permute(0, 2, 3, 1), self.window)
        n, l2, _ = xq.shape

        q = self.q(self.norm_q(xq)).view(n, l2, self.heads, self.head_dim).transpose(1, 2)
        kv = self.norm_kv(xkv)
        k = self.k(kv).view(n, l2, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(kv).view(n, l2, self.heads, self.head_dim).transpose(1, 2)
        attn = ((q @ k.transpose(-2, -1)) * self.head_dim ** -0.5).softmax(dim=-1)
        out = self.proj((attn @ v).transpose(1, 2).reshape(n, l2, c))

        x = xq + out
        x = x + self.ffn(self.norm_ffn(x))
        return window_merge(x, self.window, h, w).permute(0, 3, 1, 2)


class ReconstructionHead(nn.Module):
    """3x3 conv, sub-pixel upsample, 3x3 conv down to the two complex channels."""

    def __init__(self, channels, scale):
        super().__init__()
        self.pre = nn.Conv2d(channels, channels * scale * scale, 3, padding=1)
        self.shuffle = nn.PixelShuffle(scale)
        self.post = nn.Conv2d(channels, 2, 3, padding=1)

    def forward(self, x):
        return self.post(self.shuffle(self.pre(x)))


class PLWformer(nn.Module):
    """Full decoder: embedding, cross-contrast fusion, guided trunk, upsampling head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        latent_dim = cfg.latent_dim
        self.embed = PixelEmbed(cfg.channels, cfg.scale, cfg.use_reference)
        self.fusion = None
        if cfg.use_reference:
            self.fusion = CrossContrastFusion(cfg.channels, cfg.heads_per_layer[0],
                                              cfg.window)
        self.layers = nn.ModuleList([
            PLWLayer(cfg.channels, latent_dim, blocks, heads, cfg.window,
                     cfg.reduction, cfg.ffn_expansion, cfg.use_prior)
            for blocks, heads in zip(cfg.blocks_per_layer, cfg.heads_per_layer)
        ])
        self.head = ReconstructionHead(cfg.channels, cfg.scale)

    def forward(self, lr, ref=None, z=None):
        base = F.interpolate(lr, scale_factor=self.cfg.scale, mode="bilinear",
                             align_corners=False)
        f_lr, f_ref = self.embed(lr, ref)
        if self.fusion is not None:
            f_lr, size = pad_to_window(f_lr, self.cfg.window)
            f_ref, _ = pad_to_window(f_ref, self.cfg.window)
            f = self.fusion(f_lr, f_ref)
        else:
            f, size = pad_to_window(f_lr, self.cfg.window)
        for layer in self.layers:
            f = layer(f, z)
        f = f[..., :size[0], :size[1]]
        return self.head(f) + base
