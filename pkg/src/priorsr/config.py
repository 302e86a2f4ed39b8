"""Run configuration: nested sections, strict validation, YAML round-trip."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigurationError


@dataclass
class DataConfig:
    size: int = 64              # HR image side length
    num_ellipses: int = 6
    num_samples: int = 4
    seed: int = 0
    split: str = "train"


@dataclass
class ModelConfig:
    channels: int = 32                      # decoder feature width C
    latent_channels: int = 32               # encoder trunk width; latent is 4x this
    window: int = 8                         # attention window side L
    reduction: int = 2                      # key/value token reduction factor k
    blocks_per_layer: tuple[int, ...] = (2, 2)
    heads_per_layer: tuple[int, ...] = (4, 4)
    scale: int = 4                          # upsampling factor s
    diffusion_steps: int = 4                # sampler iterations T
    ffn_expansion: int = 2                  # gated FFN hidden width multiplier
    lambda_img: float = 1.0
    lambda_dc: float = 0.001
    use_reference: bool = True              # cross-contrast fusion on/off (SCSR when off)
    use_prior: bool = True                  # latent modulation + diffusion stage on/off
    use_dc: bool = True                     # frequency-domain consistency loss on/off
    use_condition: bool = True              # LR-conditioned denoiser on/off
    joint_training: bool = True             # stage-two decoder fine-tuning on/off

    @property
    def latent_dim(self) -> int:
        return 4 * self.latent_channels


@dataclass
class KSpaceConfig:
    pattern: str = "cartesian_lowfreq_random"
    acceleration: float = 4.0
    center_fraction: float = 0.08
    seed: int = 0
    dc_blend: float | None = None   # None: hard replacement at sampled positions
    degradation: str = "kspace_truncation"


@dataclass
class DiffusionConfig:
    beta_start: float = 0.1
    beta_end: float = 0.99


@dataclass
class TrainConfig:
    batch_size: int = 4
    base_lr: float = 2e-4
    total_steps: int = 5000
    lr_milestones: tuple[int, ...] = (2500, 4000, 4500, 4750)
    lr_decay: float = 0.5
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 50


@dataclass
class EvalConfig:
    seed: int = 0
    psnr_cap_db: float = 100.0


_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "kspace": KSpaceConfig,
    "diffusion": DiffusionConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    kspace: KSpaceConfig = field(default_factory=KSpaceConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    # ------------------------------------------------------------------ io

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("config root must be a mapping")
        unknown = set(raw) - set(_SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config section(s): {sorted(unknown)}")
        sections = {}
        for name, section_cls in _SECTIONS.items():
            entries = raw.get(name, {})
            if entries is None:
                entries = {}
            if not isinstance(entries, dict):
                raise ConfigurationError(f"section '{name}' must be a mapping")
            known = {f.name: f for f in fields(section_cls)}
            bad = set(entries) - set(known)
            if bad:
                raise ConfigurationError(
                    f"unknown key(s) in section '{name}': {sorted(bad)}")
            coerced = {}
            for key, value in entries.items():
                if isinstance(value, list):
                    value = tuple(value)
                coerced[key] = value
            sections[name] = section_cls(**coerced)
        return cls(**sections)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return json.loads(json.dumps(out, default=list))

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        cfg = cls.from_dict(raw or {})
        return cfg

    def to_yaml(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def set_override(self, dotted_key: str, raw_value: str) -> None:
        """Apply a 'section.key=value' style override; values parsed as YAML."""
        if "." not in dotted_key:
            raise ConfigurationError(f"override key '{dotted_key}' must be section.key")
        section_name, key = dotted_key.split(".", 1)
        if section_name not in _SECTIONS:
            raise ConfigurationError(f"unknown config section '{section_name}'")
        section = getattr(self, section_name)
        if key not in {f.name for f in fields(section)}:
            raise ConfigurationError(f"unknown key '{key}' in section '{section_name}'")
        value = yaml.safe_load(raw_value)
        if isinstance(value, list):
            value = tuple(value)
        setattr(section, key, value)

    # ---------------------------------------------------------- validation

    def validate(self) -> None:
        """Check every cross-field constraint; raises ConfigurationError."""
        m, d, k, t = self.model, self.data, self.kspace, self.train

        def require(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigurationError(msg)

        require(m.channels > 0, "model.channels must be positive")
        require(m.latent_channels > 0, "model.latent_channels must be positive")
        require(m.window > 0, "model.window must be positive")
        require(m.reduction > 0, "model.reduction must be positive")
        require(m.scale > 0, "model.scale must be positive")
        require(m.diffusion_steps > 0, "model.diffusion_steps must be positive")
        require(len(m.blocks_per_layer) == len(m.heads_per_layer),
                "model.blocks_per_layer and model.heads_per_layer lengths differ")
        require(len(m.blocks_per_layer) > 0, "model.blocks_per_layer is empty")
        require(all(b > 0 for b in m.blocks_per_layer),
                "model.blocks_per_layer entries must be positive")
        for h in m.heads_per_layer:
            require(h > 0 and m.channels % h == 0,
                    f"model.channels={m.channels} not divisible by heads={h}")
        require(m.channels % (m.reduction ** 2) == 0,
                f"model.channels={m.channels} not divisible by reduction^2={m.reduction ** 2}")
        require(m.window % m.reduction == 0,
                f"model.window={m.window} not divisible by reduction={m.reduction}")
        require((m.window // 2) % m.reduction == 0 or m.window == 1,
                f"half window {m.window // 2} not divisible by reduction={m.reduction}; "
                "shifted blocks would misalign reduced key/value patches")
        require(m.ffn_expansion > 0, "model.ffn_expansion must be positive")

        require(d.size > 0, "data.size must be positive")
        require(d.size % m.scale == 0,
                f"data.size={d.size} not divisible by model.scale={m.scale}")
        require((d.size // m.scale) % m.window == 0,
                f"feature grid {d.size // m.scale} not divisible by model.window={m.window}")
        require(d.num_ellipses > 0, "data.num_ellipses must be positive")
        require(d.num_samples >= 0, "data.num_samples must be non-negative")
        require(d.split in ("train", "val", "test"),
                f"data.split '{d.split}' not one of train/val/test")

        require(k.pattern in ("cartesian_lowfreq_random", "full", "empty"),
                f"kspace.pattern '{k.pattern}' unknown")
        require(k.acceleration >= 1.0, "kspace.acceleration must be >= 1")
        require(0.0 < k.center_fraction < 1.0,
                "kspace.center_fraction must lie in (0, 1)")
        require(k.dc_blend is None or k.dc_blend >= 0,
                "kspace.dc_blend must be None or >= 0")
        require(k.degradation == "kspace_truncation",
                f"kspace.degradation '{k.degradation}' unknown")

        b = self.diffusion
        require(0.0 < b.beta_start <= b.beta_end < 1.0,
                "diffusion betas must satisfy 0 < beta_start <= beta_end < 1")

        require(t.batch_size > 0, "train.batch_size must be positive")
        require(t.base_lr > 0, "train.base_lr must be positive")
        require(t.total_steps > 0, "train.total_steps must be positive")
        require(0 < t.lr_decay <= 1, "train.lr_decay must lie in (0, 1]")
        ms = t.lr_milestones
        require(all(ms[i] < ms[i + 1] for i in range(len(ms) - 1)),
                "train.lr_milestones must be strictly increasing")
        require(all(0 < s < t.total_steps for s in ms),
                "train.lr_milestones must lie inside (0, total_steps)")
