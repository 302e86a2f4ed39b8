"""Synthetic multi-contrast image pairs: generation, degradation, serialization.

Images are stored as (H, W, 2) float32 arrays, channel 0 real and channel 1
imaginary. Pairs share ellipse geometry (same anatomy) but draw per-ellipse
intensities from independent streams (different contrast).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigurationError, ShapeMismatchError


def complex_to_channels(z: np.ndarray) -> np.ndarray:
    """Split a complex array into a trailing (real, imag) channel axis."""
    return np.stack([z.real, z.imag], axis=-1)


def channels_to_complex(arr: np.ndarray) -> np.ndarray:
    """Inverse of complex_to_channels; exact round-trip."""
    if arr.shape[-1] != 2:
        raise ShapeMismatchError(f"expected trailing channel axis of 2, got {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


@dataclass(frozen=True)
class ComplexImage:
    """An H x W complex-valued image stored as two real channels."""

    values: np.ndarray  # (H, W, 2)

    def __post_init__(self):
        v = self.values
        if v.ndim != 3 or v.shape[2] != 2:
            raise ShapeMismatchError(f"ComplexImage needs shape (H, W, 2), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("ComplexImage contains non-finite entries")

    @classmethod
    def from_complex(cls, z: np.ndarray, dtype=np.float32) -> "ComplexImage":
        return cls(complex_to_channels(z).astype(dtype))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def complex(self) -> np.ndarray:
        return channels_to_complex(self.values)

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.values[..., 0], self.values[..., 1])


@dataclass
class MultiContrastSample:
    ref_hr: ComplexImage
    target_hr: ComplexImage
    target_lr: ComplexImage
    mask: np.ndarray        # (Hs, Ws) binary
    sample_id: str


# ----------------------------------------------------------------- phantoms

def _ellipse_params(rng: np.random.Generator, size: int, n: int) -> np.ndarray:
    """(n, 5) rows of center_y, center_x, semi_y, semi_x, angle."""
    cy = rng.uniform(0.2, 0.8, n) * size
    cx = rng.uniform(0.2, 0.8, n) * size
    ay = rng.uniform(0.08, 0.30, n) * size
    ax = rng.uniform(0.08, 0.30, n) * size
    th = rng.uniform(0.0, np.pi, n)
    return np.stack([cy, cx, ay, ax, th], axis=1)


def _render(params: np.ndarray, intensities: np.ndarray, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size), dtype=np.float64)
    for (cy, cx, ay, ax, th), w in zip(params, intensities):
        dy, dx = yy - cy, xx - cx
        u = np.cos(th) * dx + np.sin(th) * dy
        v = -np.sin(th) * dx + np.cos(th) * dy
        img += w * ((u / ax) ** 2 + (v / ay) ** 2 <= 1.0)
    return img


def _phase_field(rng: np.random.Generator, size: int, amplitude: float = 0.2) -> np.ndarray:
    """Smooth low-amplitude phase map from a handful of low-frequency waves."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    phase = np.zeros((size, size), dtype=np.float64)
    for _ in range(3):
        fy, fx = rng.integers(1, 3, size=2)
        py, px = rng.uniform(0, 2 * np.pi, size=2)
        phase += rng.uniform(-1.0, 1.0) * np.sin(2 * np.pi * fy * yy + py) \
            * np.sin(2 * np.pi * fx * xx + px)
    peak = np.abs(phase).max()
    if peak > 0:
        phase *= amplitude / peak
    return phase


def synth_phantom(seed: int, size: int, num_ellipses: int,
                  scale: int = 1) -> tuple[ComplexImage, ComplexImage]:
    """Two phantoms with shared geometry and contrast-specific intensities.

    The seed is split into one geometry stream and two contrast streams, so
    pairs generated from different seeds with a shared geometry seed differ
    only in intensity.
    """
    if scale > 1 and size % scale != 0:
        raise ConfigurationError(f"size={size} not divisible by scale={scale}")
    geometry = _ellipse_params(np.random.default_rng([seed, 0]), size, num_ellipses)
    images = []
    for stream in (1, 2):
        rng = np.random.default_rng([seed, stream])
        intensities = rng.uniform(0.2, 1.0, num_ellipses)
        mag = _render(geometry, intensities, size)
        peak = mag.max()
        if peak > 0:
            mag /= peak
        phase = _phase_field(rng, size)
        images.append(ComplexImage.from_complex(mag * np.exp(1j * phase)))
    ref_hr, target_hr = images
    return ref_hr, target_hr


# -------------------------------------------------------------- degradation

def degrade(hr: ComplexImage, s: int) -> ComplexImage:
    """Downsample by truncating the centered spectrum to its central block.

    Retains the central (H/s, W/s) frequencies under orthonormal scaling and
    rescales amplitude by 1/s (energy by 1/s^2), so a constant image maps to
    the same constant.
    """
    h, w = hr.height, hr.width
    if h % s != 0 or w % s != 0:
        raise ConfigurationError(f"image dims ({h}, {w}) not divisible by scale={s}")
    z = hr.complex.astype(np.complex128)
    k = np.fft.fftshift(np.fft.fft2(z, norm="ortho"))
    hs, ws = h // s, w // s
    top, left = (h - hs) // 2, (w - ws) // 2
    kc = k[top:top + hs, left:left + ws] / s
    out = np.fft.ifft2(np.fft.ifftshift(kc), norm="ortho")
    return ComplexImage.from_complex(out, dtype=hr.values.dtype)


# ------------------------------------------------------------- persistence

@dataclass
class DatasetManifest:
    root: Path
    entries: list[str]
    scale: int
    split: str = "train"


def sample_path(root: Path | str, sample_id: str) -> Path:
    return Path(root) / f"{sample_id}.npz"


def save_sample(root: Path | str, sample_id: str,
                ref_hr: ComplexImage, target_hr: ComplexImage) -> Path:
    path = sample_path(root, sample_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, ref_hr=ref_hr.values.astype(np.float32),
             target_hr=target_hr.values.astype(np.float32))
    return path


def load_sample(manifest: DatasetManifest, sample_id: str,
                mask: np.ndarray) -> MultiContrastSample:
    """Load stored HR arrays; LR is regenerated deterministically by degradation."""
    path = sample_path(manifest.root, sample_id)
    if not path.exists():
        raise FileNotFoundError(f"sample '{sample_id}' not found at {path}")
    with np.load(path) as archive:
        ref_hr = ComplexImage(archive["ref_hr"])
        target_hr = ComplexImage(archive["target_hr"])
    if ref_hr.values.shape != target_hr.values.shape:
        raise ShapeMismatchError(
            f"{sample_id}: ref {ref_hr.values.shape} vs target {target_hr.values.shape}")
    if target_hr.height % manifest.scale or target_hr.width % manifest.scale:
        raise ShapeMismatchError(
            f"{sample_id}: dims ({target_hr.height}, {target_hr.width}) not divisible "
            f"by manifest scale {manifest.scale}")
    if mask.shape != (target_hr.height, target_hr.width):
        raise ShapeMismatchError(
            f"{sample_id}: mask shape {mask.shape} vs image "
            f"({target_hr.height}, {target_hr.width})")
    target_lr = degrade(target_hr, manifest.scale)
    return MultiContrastSample(ref_hr, target_hr, target_lr, mask, sample_id)


def manifest_path(root: Path | str) -> Path:
    return Path(root) / "manifest.txt"


def save_manifest(manifest: DatasetManifest) -> Path:
    path = manifest_path(manifest.root)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"scale {manifest.scale}"]
    lines += [f"{sid} {manifest.split}" for sid in manifest.entries]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_manifest(root: Path | str, split: str | None = None) -> DatasetManifest:
    path = manifest_path(root)
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("scale "):
        raise ConfigurationError(f"manifest {path} missing leading 'scale' line")
    scale = int(lines[0].split()[1])
    entries, seen_split = [], None
    for line in lines[1:]:
        sid, entry_split = line.split()
        if split is not None and entry_split != split:
            continue
        entries.append(sid)
        seen_split = entry_split
    return DatasetManifest(Path(root), entries, scale, seen_split or (split or "train"))


def generate_dataset(cfg: RunConfig, out_dir: Path | str,
                     num_samples: int | None = None) -> DatasetManifest:
    """Synthesize phantom pairs to disk and write their manifest."""
    cfg.validate()
    n = cfg.data.num_samples if num_samples is None else num_samples
    root = Path(out_dir)
    entries = []
    for i in range(n):
        sid = f"sample_{i:04d}"
        ref_hr, target_hr = synth_phantom(
            seed=cfg.data.seed + i, size=cfg.data.size,
            num_ellipses=cfg.data.num_ellipses, scale=cfg.model.scale)
        save_sample(root, sid, ref_hr, target_hr)
        entries.append(sid)
    manifest = DatasetManifest(root, entries, cfg.model.scale, cfg.data.split)
    save_manifest(manifest)
    return manifest
