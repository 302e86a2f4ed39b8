"""Two-stage optimization driver: seeded, resumable, checkpointed.

Stage one jointly trains the target-aware latent encoder and the decoder;
stage two freezes that encoder and trains the condition encoder, the noise
predictor, and (when joint training is on) the decoder through the sampler.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .data import DatasetManifest, load_sample
from .diffusion import (DiffusionSchedule, NoisePredictor, diff_loss,
                        make_schedule, sample_prior)
from .errors import ConfigurationError, TrainingDiverged
from .kspace import data_consistency, dc_loss, fft2c, make_mask
from .plwformer import PLWformer
from .prior import ConditionExtractor, PriorExtractor

CHECKPOINT_SCHEMA = 1


@dataclass
class TrainingBatch:
    lr: torch.Tensor      # (N, 2, H, W)
    ref: torch.Tensor     # (N, 2, Hs, Ws)
    hr: torch.Tensor      # (N, 2, Hs, Ws)
    k_hr: torch.Tensor    # (N, 2, Hs, Ws)
    ids: list[str]

    def select(self, idx: torch.Tensor) -> "TrainingBatch":
        return TrainingBatch(self.lr[idx], self.ref[idx], self.hr[idx],
                             self.k_hr[idx], [self.ids[i] for i in idx.tolist()])


def _to_tensor(values: np.ndarray) -> torch.Tensor:
    # (H, W, 2) -> (2, H, W)
    return torch.from_numpy(np.ascontiguousarray(values.transpose(2, 0, 1)))


def load_training_set(manifest: DatasetManifest, mask: np.ndarray) -> TrainingBatch:
    lr, ref, hr, ids = [], [], [], []
    for sid in manifest.entries:
        sample = load_sample(manifest, sid, mask)
        lr.append(_to_tensor(sample.target_lr.values))
        ref.append(_to_tensor(sample.ref_hr.values))
        hr.append(_to_tensor(sample.target_hr.values))
        ids.append(sid)
    if not ids:
        raise ConfigurationError("manifest has no entries")
    hr_t = torch.stack(hr)
    return TrainingBatch(torch.stack(lr), torch.stack(ref), hr_t, fft2c(hr_t), ids)


def build_modules(cfg: RunConfig, stage: int) -> dict[str, torch.nn.Module]:
    m = cfg.model
    modules: dict[str, torch.nn.Module] = {"decoder": PLWformer(m)}
    if m.use_prior:
        modules["pe"] = PriorExtractor(m.latent_channels, m.scale)
        if stage == 2:
            if m.use_condition:
                modules["ce"] = ConditionExtractor(m.latent_channels)
            modules["denoiser"] = NoisePredictor(m.latent_dim)
    return modules


# ------------------------------------------------------------------ losses

def stage1_loss(batch: TrainingBatch, modules, mask: torch.Tensor,
                cfg: RunConfig):
    """Image L1 plus weighted frequency-consistency term; returns (total, parts)."""
    m = cfg.model
    z = modules["pe"](batch.hr, batch.lr) if m.use_prior else None
    ref = batch.ref if m.use_reference else None
    sr = modules["decoder"](batch.lr, ref, z)
    l_img = (sr - batch.hr).abs().mean()
    total = m.lambda_img * l_img
    parts = {"l_img": float(l_img)}
    if m.use_dc:
        k_dc = data_consistency(fft2c(sr), batch.k_hr, mask, blend=cfg.kspace.dc_blend)
        l_dc = dc_loss(k_dc, batch.k_hr)
        total = total + m.lambda_dc * l_dc
        parts["l_dc"] = float(l_dc)
    return total, parts


def stage2_loss(batch: TrainingBatch, modules, mask: torch.Tensor,
                schedule: DiffusionSchedule, cfg: RunConfig,
                generator: torch.Generator):
    """Latent rollout loss plus (when joint) the stage-one image objectives."""
    m = cfg.model
    with torch.no_grad():
        z_target = modules["pe"](batch.hr, batch.lr)
    if m.use_condition:
        cond = modules["ce"](batch.lr)
    else:
        cond = torch.zeros(batch.lr.shape[0], m.latent_dim, dtype=batch.lr.dtype)
    z_hat = sample_prior(cond, schedule, modules["denoiser"], generator=generator)
    l_diff = diff_loss(z_hat, z_target)
    parts = {"l_diff": float(l_diff)}
    ref = batch.ref if m.use_reference else None

    if m.joint_training:
        sr = modules["decoder"](batch.lr, ref, z_hat)
        l_img = (sr - batch.hr).abs().mean()
        total = m.lambda_img * l_img + l_diff
        parts["l_img"] = float(l_img)
        if m.use_dc:
            k_dc = data_consistency(fft2c(sr), batch.k_hr, mask,
                                    blend=cfg.kspace.dc_blend)
            l_dc = dc_loss(k_dc, batch.k_hr)
            total = total + m.lambda_dc * l_dc
            parts["l_dc"] = float(l_dc)
        return total, parts

    # separate training: only the latent pathway learns; image terms are logged
    with torch.no_grad():
        sr = modules["decoder"](batch.lr, ref, z_hat)
        parts["l_img"] = float((sr - batch.hr).abs().mean())
    return l_diff, parts


# ------------------------------------------------------------- checkpoints

def save_checkpoint(path: Path, stage: int, step: int, cfg: RunConfig, modules,
                    optimizer, noise_generator: torch.Generator) -> Path:
    payload = {
        "schema_version": CHECKPOINT_SCHEMA,
        "stage": stage,
        "step": step,
        "config": cfg.to_dict(),
        "modules": {name: mod.state_dict() for name, mod in modules.items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng": torch.get_rng_state(),
        "noise_rng": noise_generator.get_state(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ConfigurationError(
            f"checkpoint schema {payload.get('schema_version')} != {CHECKPOINT_SCHEMA}")
    return payload


# ----------------------------------------------------------------- trainer

class Trainer:
    """Owns the modules, optimizer, RNG streams, and the metrics log for a stage."""

    def __init__(self, cfg: RunConfig, manifest: DatasetManifest, stage: int,
                 out_dir: str | Path, stage1_ckpt: str | Path | None = None,
                 resume: str | Path | None = None):
        cfg.validate()
        if stage not in (1, 2):
            raise ConfigurationError(f"stage must be 1 or 2, got {stage}")
        if stage == 2 and not cfg.model.use_prior:
            raise ConfigurationError("stage two requires the latent prior to be enabled")
        if stage == 2 and stage1_ckpt is None and resume is None:
            raise ConfigurationError("stage two requires a stage-one checkpoint")

        self.cfg = cfg
        self.stage = stage
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

        torch.manual_seed(cfg.train.seed)
        self.modules = build_modules(cfg, stage)
        self.noise_generator = torch.Generator().manual_seed(cfg.train.seed + 1)

        size = cfg.data.size
        mask_np = make_mask((size, size), cfg.kspace.pattern, cfg.kspace.acceleration,
                            cfg.kspace.center_fraction, cfg.kspace.seed)
        self.mask = torch.from_numpy(mask_np)
        self.batch_all = load_training_set(manifest, mask_np)

        self.schedule = None
        if stage == 2:
            self.schedule = make_schedule(cfg.model.diffusion_steps,
                                          cfg.diffusion.beta_start,
                                          cfg.diffusion.beta_end)
            if resume is None:
                payload = load_checkpoint(stage1_ckpt)
                if payload["stage"] != 1:
                    raise ConfigurationError("stage-one checkpoint required, got stage "
                                             f"{payload['stage']}")
                self.modules["decoder"].load_state_dict(payload["modules"]["decoder"])
                self.modules["pe"].load_state_dict(payload["modules"]["pe"])
            self.modules["pe"].requires_grad_(False)
            self.modules["pe"].eval()

        self.optimizer = torch.optim.Adam(self._trainable_parameters(),
                                          lr=cfg.train.base_lr, betas=(0.9, 0.999))
        self.step = 0
        self.metrics_path = self.out_dir / f"metrics_stage{stage}.jsonl"

        if resume is not None:
            payload = load_checkpoint(resume)
            if payload["stage"] != stage:
                raise ConfigurationError(
                    f"resume checkpoint is stage {payload['stage']}, expected {stage}")
            for name, mod in self.modules.items():
                mod.load_state_dict(payload["modules"][name])
            self.optimizer.load_state_dict(payload["optimizer"])
            torch.set_rng_state(payload["torch_rng"])
            self.noise_generator.set_state(payload["noise_rng"])
            self.step = payload["step"]

    def _trainable_parameters(self):
        m = self.cfg.model
        params = []
        if self.stage == 1:
            names = list(self.modules)
        elif m.joint_training:
            names = [n for n in self.modules if n != "pe"]
        else:
            names = [n for n in self.modules if n in ("ce", "denoiser")]
        for name in names:
            params.extend(self.modules[name].parameters())
        return params

    def lr_at(self, step: int) -> float:
        t = self.cfg.train
        passed = sum(1 for ms in t.lr_milestones if step >= ms)
        return t.base_lr * t.lr_decay ** passed

    def _select_batch(self) -> TrainingBatch:
        n = len(self.batch_all.ids)
        bs = self.cfg.train.batch_size
        if bs >= n:
            return self.batch_all
        idx = torch.randperm(n, generator=self.noise_generator)[:bs]
        return self.batch_all.select(idx)

    def train_step(self) -> dict:
        batch = self._select_batch()
        lr = self.lr_at(self.step)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad()
        if self.stage == 1:
            total, parts = stage1_loss(batch, self.modules, self.mask, self.cfg)
        else:
            total, parts = stage2_loss(batch, self.modules, self.mask, self.schedule,
                                       self.cfg, self.noise_generator)
        if not torch.isfinite(total):
            raise TrainingDiverged(
                f"non-finite loss at step {self.step} on batch {batch.ids}: "
                f"{parts}")
        total.backward()
        self.optimizer.step()
        self.step += 1
        record = {"step": self.step, "lr": lr, "total": float(total)}
        record.update(parts)
        return record

    def run(self) -> Path:
        t = self.cfg.train
        with open(self.metrics_path, "a") as log:
            while self.step < t.total_steps:
                record = self.train_step()
                if record["step"] % t.log_every == 0 or record["step"] == t.total_steps:
                    log.write(json.dumps(record) + "\n")
                if record["step"] % t.checkpoint_every == 0:
                    self.save(self.out_dir / f"stage{self.stage}_step{self.step:06d}.pt")
        return self.save(self.out_dir / f"stage{self.stage}_final.pt")

    def save(self, path: Path) -> Path:
        return save_checkpoint(path, self.stage, self.step, self.cfg, self.modules,
                               self.optimizer, self.noise_generator)
