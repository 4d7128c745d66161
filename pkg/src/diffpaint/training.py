"""Two-phase training on synthetic stroke quadruples.

Phase one trains the painter alone on pixel + stroke losses; after the
pretrain boundary a Wasserstein critic joins and each step becomes
n_critic critic updates followed by one painter update whose total loss
adds the adaptively weighted adversarial term.

Every step synthesizes a fresh batch from a per-step seed derived from
(run seed, step index), so any step can be replayed in isolation; the
seed is recorded if a non-finite loss aborts the run. Predicted strokes
are rendered with a hard accept/skip gate (logit >= 0) whose backward
pass uses the sigmoid derivative, keeping the pixel and adversarial
losses aware of the confidence head while matching inference behavior.

Checkpoints hold the painter and critic weights plus a plain-text
manifest of the architecture knobs; loading rebuilds the modules from
the manifest and fails on any mismatch with the stored weights.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch

from .critic import Critic
from .losses import (
    LossReport,
    REPORT_FIELDS,
    adaptive_total,
    critic_loss,
    generator_adv_loss,
    pixel_loss,
    stroke_loss,
)
from .model import Painter
from .renderer import render_batch
from .synthesis import SampleBatch, synthesize_batch

LOG_NAME = "training_log.tsv"
CONFIG_NAME = "config.txt"
FINAL_CHECKPOINT = "checkpoint_final.pt"
_TRUE_WORDS = {"true", "1", "yes", "on"}
_FALSE_WORDS = {"false", "0", "no", "off"}


@dataclass
class TrainConfig:
    """Desk-scale defaults; see paper_scale() for the full-size preset."""

    patch_size: int = 32
    max_strokes: int = 8
    batch_size: int = 16
    total_steps: int = 2000
    pretrain_steps: int = 1000
    lr: float = 1e-4
    weight_decay: float = 1e-2
    lambda_p: float = 8.0
    lambda_w: float = 10.0
    lambda_c: float = 0.1
    lambda_dis: float = 10.0
    seed: int = 0
    n_critic: int = 5
    width: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    critic_base: int = 32
    checkpoint_every: int = 500
    no_differential: bool = False
    no_coord: bool = False
    no_discriminator: bool = False
    no_conf_reg: bool = False

    def __post_init__(self):
        if self.patch_size % 4 != 0:
            raise ValueError("patch_size must be divisible by 4")
        if self.pretrain_steps > self.total_steps:
            raise ValueError("pretrain_steps must not exceed total_steps")
        if min(self.lambda_p, self.lambda_w, self.lambda_c, self.lambda_dis) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_size < 1 or self.n_critic < 1 or self.checkpoint_every < 1:
            raise ValueError("batch_size, n_critic and checkpoint_every must be positive")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        values = dict(
            batch_size=64,
            total_steps=100_000,
            pretrain_steps=50_000,
            width=128,
            heads=8,
            critic_base=64,
        )
        values.update(overrides)
        return cls(**values)

    def save(self, path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in dataclasses.fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        """Parse a flat `key = value` file; keyword overrides win."""
        values = {}
        types = {f.name: type(f.default) for f in dataclasses.fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = (part.strip() for part in line.partition("="))
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            if types[key] is bool:
                low = value.lower()
                if low not in _TRUE_WORDS | _FALSE_WORDS:
                    raise ValueError(f"{path}:{lineno}: bad boolean {value!r}")
                values[key] = low in _TRUE_WORDS
            else:
                values[key] = types[key](value)
        values.update(overrides)
        return cls(**values)

    def build_painter(self) -> Painter:
        return Painter(
            patch_size=self.patch_size,
            max_strokes=self.max_strokes,
            width=self.width,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            heads=self.heads,
            use_coord=not self.no_coord,
            use_differential=not self.no_differential,
        )

    def build_critic(self) -> Critic:
        return Critic(patch_size=self.patch_size, base_width=self.critic_base, use_coord=not self.no_coord)


def step_seed(run_seed: int, step: int) -> int:
    """Stable per-step seed so any batch can be re-synthesized alone."""
    return int(np.random.SeedSequence([run_seed, step]).generate_state(1)[0])


# --- checkpoints ---


def manifest_text(config: TrainConfig) -> str:
    keys = (
        "patch_size",
        "max_strokes",
        "width",
        "enc_layers",
        "dec_layers",
        "heads",
        "critic_base",
        "no_differential",
        "no_coord",
        "no_discriminator",
        "no_conf_reg",
    )
    return "\n".join(f"{k} = {getattr(config, k)}" for k in keys) + "\n"


def manifest_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def save_checkpoint(path, painter: Painter, critic: Optional[Critic], config: TrainConfig, step: int) -> None:
    torch.save(
        {
            "manifest": manifest_text(config),
            "step": step,
            "painter": painter.state_dict(),
            "critic": None if critic is None else critic.state_dict(),
        },
        path,
    )


@dataclass
class Checkpoint:
    painter: Painter
    critic: Optional[Critic]
    manifest: dict
    manifest_hash: str
    step: int


def _parse_manifest(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = (p.strip() for p in line.partition("="))
        if value in ("True", "False"):
            out[key] = value == "True"
        else:
            out[key] = int(value)
    return out


def load_checkpoint(path, expect: Optional[dict] = None) -> Checkpoint:
    """Rebuild painter (and critic, if stored) from a checkpoint.

    `expect` maps manifest keys to required values; a mismatch raises,
    which is how runtime config is verified against the stored model.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    for key in ("manifest", "painter", "step"):
        if key not in blob:
            raise ValueError(f"checkpoint {path} is missing its {key!r} section")
    manifest = _parse_manifest(blob["manifest"])
    if expect:
        for key, value in expect.items():
            if manifest.get(key) != value:
                raise ValueError(
                    f"checkpoint manifest mismatch for {key!r}: stored {manifest.get(key)!r}, expected {value!r}"
                )
    painter = Painter(
        patch_size=manifest["patch_size"],
        max_strokes=manifest["max_strokes"],
        width=manifest["width"],
        enc_layers=manifest["enc_layers"],
        dec_layers=manifest["dec_layers"],
        heads=manifest["heads"],
        use_coord=not manifest["no_coord"],
        use_differential=not manifest["no_differential"],
    )
    painter.load_state_dict(blob["painter"])
    painter.eval()
    critic = None
    if blob.get("critic") is not None:
        critic = Critic(
            patch_size=manifest["patch_size"],
            base_width=manifest["critic_base"],
            use_coord=not manifest["no_coord"],
        )
        critic.load_state_dict(blob["critic"])
        critic.eval()
    return Checkpoint(
        painter=painter,
        critic=critic,
        manifest=manifest,
        manifest_hash=manifest_hash(blob["manifest"]),
        step=int(blob["step"]),
    )


# --- the loop ---


def gated_confidence(logits: torch.Tensor) -> torch.Tensor:
    """Hard accept/skip gate (logit >= 0) with a sigmoid surrogate
    gradient, so rendering matches inference yet stays trainable."""
    soft = torch.sigmoid(logits)
    return (logits >= 0).to(logits.dtype) + soft - soft.detach()


class Trainer:
    def __init__(self, config: TrainConfig, out_dir):
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        torch.manual_seed(config.seed)
        self.painter = config.build_painter()
        self.critic = None if config.no_discriminator else config.build_critic()
        self.painter_opt = torch.optim.AdamW(self.painter.parameters(), lr=config.lr, weight_decay=config.weight_decay)
        self.critic_opt = None
        if self.critic is not None:
            self.critic_opt = torch.optim.AdamW(self.critic.parameters(), lr=config.lr, weight_decay=config.weight_decay)
        self._saved_checkpoints = []

    def synthesize(self, step: int) -> Tuple[SampleBatch, torch.Generator]:
        """Per-step batch plus the generator for this step's other draws."""
        gen = torch.Generator().manual_seed(step_seed(self.config.seed, step))
        batch = synthesize_batch(
            gen,
            self.config.batch_size,
            size=self.config.patch_size,
            max_strokes=self.config.max_strokes,
        )
        return batch, gen

    def _painter_losses(self, batch: SampleBatch):
        pred_params, pred_logits = self.painter(batch.canvas, batch.target)
        rendered = render_batch(batch.canvas, pred_params, gated_confidence(pred_logits))
        pixel = pixel_loss(batch.target, rendered, self.config.lambda_p)
        matched, conf_reg = stroke_loss(
            batch.stroke_params,
            batch.stroke_conf,
            pred_params,
            pred_logits,
            lambda_w=self.config.lambda_w,
            lambda_c=self.config.lambda_c,
        )
        if self.config.no_conf_reg:
            conf_reg = torch.zeros(())
        return rendered, pixel, matched, conf_reg

    def painter_step(self, batch: SampleBatch) -> LossReport:
        """Pretrain-phase update: pixel + stroke losses only."""
        _, pixel, matched, conf_reg = self._painter_losses(batch)
        total, gamma = adaptive_total(pixel, matched + conf_reg, None)
        self.painter_opt.zero_grad()
        total.backward()
        self.painter_opt.step()
        return LossReport(
            pixel=pixel.item(),
            stroke_match=matched.item(),
            confidence_reg=conf_reg.item(),
            adv_generator=0.0,
            adv_critic=0.0,
            total=total.item(),
            gamma=gamma,
        )

    def critic_generator_step(self, batch: SampleBatch, gen: torch.Generator) -> LossReport:
        """Adversarial-phase update: n_critic critic steps, one painter step."""
        rendered, pixel, matched, conf_reg = self._painter_losses(batch)
        fake = rendered.detach()
        adv_c = math.nan
        for _ in range(self.config.n_critic):
            c_loss = critic_loss(self.critic, batch.target, fake, rng=gen, penalty_weight=self.config.lambda_dis)
            self.critic_opt.zero_grad()
            c_loss.backward()
            self.critic_opt.step()
            adv_c = c_loss.item()
        adv_g = generator_adv_loss(self.critic, rendered)
        total, gamma = adaptive_total(pixel, matched + conf_reg, adv_g)
        self.painter_opt.zero_grad()
        total.backward()
        self.painter_opt.step()
        return LossReport(
            pixel=pixel.item(),
            stroke_match=matched.item(),
            confidence_reg=conf_reg.item(),
            adv_generator=adv_g.item(),
            adv_critic=adv_c,
            total=total.item(),
            gamma=gamma,
        )

    def step(self, index: int) -> LossReport:
        batch, gen = self.synthesize(index)
        adversarial = index >= self.config.pretrain_steps and self.critic is not None
        if adversarial:
            return self.critic_generator_step(batch, gen)
        return self.painter_step(batch)

    def save(self, step: int) -> Path:
        path = self.out_dir / f"checkpoint_{step:06d}.pt"
        save_checkpoint(path, self.painter, self.critic, self.config, step)
        self._saved_checkpoints.append(path)
        while len(self._saved_checkpoints) > 2:
            old = self._saved_checkpoints.pop(0)
            old.unlink(missing_ok=True)
        return path

    def train(self, log_every: int = 0) -> Path:
        """Run the full schedule; returns the final checkpoint path."""
        cfg = self.config
        cfg.save(self.out_dir / CONFIG_NAME)
        log_path = self.out_dir / LOG_NAME
        started = time.time()
        with open(log_path, "w") as log:
            log.write("step\t" + "\t".join(REPORT_FIELDS) + "\n")
            for index in range(cfg.total_steps):
                report = self.step(index)
                row = "\t".join(f"{v:.10e}" for v in report.values())
                log.write(f"{index}\t{row}\n")
                if not report.finite():
                    seed = step_seed(cfg.seed, index)
                    log.write(f"# aborted: non-finite loss at step {index}, batch seed {seed}\n")
                    raise RuntimeError(f"non-finite loss at step {index}; replay with batch seed {seed}")
                if (index + 1) % cfg.checkpoint_every == 0:
                    self.save(index + 1)
                if log_every and (index + 1) % log_every == 0:
                    rate = (index + 1) / (time.time() - started)
                    print(f"step {index + 1}/{cfg.total_steps}  total={report.total:.4f}  ({rate:.2f} it/s)")
        final = self.out_dir / FINAL_CHECKPOINT
        save_checkpoint(final, self.painter, self.critic, cfg, cfg.total_steps)
        return final


def train(config: TrainConfig, out_dir, log_every: int = 0) -> Path:
    """Train from scratch per `config`; returns the final checkpoint path."""
    return Trainer(config, out_dir).train(log_every=log_every)
