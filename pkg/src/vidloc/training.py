"""Batching, the momentum-SGD training loop, checkpoints and multi-label pretraining."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .core import ConfigError, ModelConfig, make_frame_grid
from .data import PromptSet, TaskSample, build_vocabulary, sample_frames
from .encoders import Vocabulary, pad_token_ids
from .losses import LossBreakdown, combined_loss
from .model import FreezePolicy, LocalizationModel
from .targets import assign_targets

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    freeze: FreezePolicy = field(default_factory=FreezePolicy)
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    steps: int = 1500
    warmup_steps: int = 50
    batch_size: int = 8
    grad_clip: float = 1.0
    seed: int = 0
    prompts: tuple = ("{label}",)
    prompt_augment: bool = False
    sampling: Optional[str] = None  # default: evenly_spaced, consecutive_padded for AS

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.freeze, dict):
            self.freeze = FreezePolicy(**self.freeze)
        self.prompts = tuple(self.prompts)
        if self.sampling is None:
            self.sampling = "consecutive_padded" if self.model.task == "as" else "evenly_spaced"
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")

    @property
    def late_fusion(self):
        return self.model.late_fusion

    @property
    def no_text(self):
        return self.model.text_mode == "no-text"

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["prompts"] = list(self.prompts)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# --------------------------------------------------------------------------- batching

class PairEncoder:
    """Token ids for class names (through a prompt template) or captions."""

    def __init__(self, vocab: Vocabulary, prompts: PromptSet, max_tokens):
        self.vocab, self.prompts, self.max_tokens = vocab, prompts, max_tokens

    def ids(self, sample: TaskSample, template=0):
        if sample.task == "mr":
            return [self.vocab.encode(t) for t in sample.texts]
        return [self.vocab.encode(self.prompts.render(t, template)) for t in sample.texts]


@dataclass
class Batch:
    raw: torch.Tensor         # (B, N, D)
    frame_mask: torch.Tensor  # (B, N)
    pair_video: torch.Tensor  # (P,)
    text_ids: torch.Tensor    # (P, T)
    text_mask: torch.Tensor   # (P, T)
    y: torch.Tensor           # (P, cells)
    dt: torch.Tensor          # (P, cells, 2)
    valid: torch.Tensor       # (P, cells)


def clip_targets(clip, n_texts, config: ModelConfig):
    """Per-text concatenated targets for a sampled clip."""
    n = len(clip.mask)
    if config.task == "as":
        grid = make_frame_grid(n, 1)
        ranges, use = None, False
    else:
        grid = make_frame_grid(n, config.L)
        ranges, use = config.regression_ranges, True
    out = []
    for c in range(n_texts):
        gts = [s for s in clip.segments if s.class_id == c]
        out.append(assign_targets(gts, grid, ranges, clip.mask, use_ranges=use).flat())
    return out


class Trainer:
    def __init__(self, config: TrainConfig, samples, vocab=None):
        self.config = config
        self.samples = list(samples)
        if not self.samples:
            raise ConfigError("empty training set")
        self.prompts = PromptSet(config.prompts)
        self.vocab = vocab or build_vocabulary([t for s in self.samples for t in s.texts], self.prompts)
        mc = config.model
        if mc.vocab_size < len(self.vocab):
            mc.vocab_size = len(self.vocab)
        if mc.text_mode == "no-text" and mc.n_classes < 1:
            mc.n_classes = len(self.samples[0].texts)
        self.pairs = PairEncoder(self.vocab, self.prompts, mc.T_max)
        self.rng = np.random.default_rng(config.seed)
        self._cache = {}

    def _prepared(self, i):
        s = self.samples[i]
        if self.config.sampling == "evenly_spaced":
            if i not in self._cache:
                clip = sample_frames(s, "evenly_spaced", self.config.model.N)
                self._cache[i] = (clip, clip_targets(clip, len(s.texts), self.config.model))
            return self._cache[i]
        clip = sample_frames(s, self.config.sampling, self.config.model.N, rng=self.rng)
        return clip, clip_targets(clip, len(s.texts), self.config.model)

    def make_batch(self, indices) -> Batch:
        raws, masks, pv, ids, ys, dts, vals = [], [], [], [], [], [], []
        for b, i in enumerate(indices):
            clip, tg = self._prepared(i)
            raws.append(clip.frames)
            masks.append(clip.mask)
            tmpl = int(self.rng.integers(len(self.prompts.templates))) if self.config.prompt_augment else 0
            for c, text_ids in enumerate(self.pairs.ids(self.samples[i], tmpl)):
                pv.append(b)
                ids.append(text_ids)
                y, dt, v = tg[c]
                ys.append(y)
                dts.append(dt)
                vals.append(v)
        tid, tmask = pad_token_ids(ids, self.config.model.T_max)
        return Batch(torch.as_tensor(np.stack(raws), dtype=torch.float32),
                     torch.as_tensor(np.stack(masks)), torch.as_tensor(pv),
                     tid, tmask,
                     torch.as_tensor(np.stack(ys)), torch.as_tensor(np.stack(dts), dtype=torch.float32),
                     torch.as_tensor(np.stack(vals)))


def batch_loss(model: LocalizationModel, batch: Batch) -> LossBreakdown:
    cfg = model.config
    text = model.encode_texts(batch.text_ids, batch.text_mask) if model.uses_text else None
    n_levels = 1 if cfg.task == "as" else None
    dense = model(batch.raw, batch.frame_mask, batch.pair_video, text,
                  n_levels=n_levels, with_regression=cfg.task != "as")
    logits = torch.cat(dense.logits, dim=-1)
    dt = None if cfg.task == "as" else torch.cat(dense.displacements, dim=1)
    return combined_loss(logits, dt, batch.y, batch.dt, batch.valid, cfg)


@dataclass
class TrainResult:
    model: LocalizationModel
    vocab: Vocabulary
    curve: list  # (step, cls, reg, total)

    def curve_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "cls_loss", "reg_loss", "total"])
        for row in self.curve:
            w.writerow([row[0]] + [f"{v:.8g}" for v in row[1:]])
        return buf.getvalue()


def _lr_at(cfg: TrainConfig, step):
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    span = max(cfg.steps - cfg.warmup_steps, 1)
    return 0.5 * cfg.lr * (1 + math.cos(math.pi * (step - cfg.warmup_steps) / span))


def build_model(config: TrainConfig, vocab_size=None):
    torch.manual_seed(config.seed)
    if vocab_size is not None and config.model.vocab_size < vocab_size:
        config.model.vocab_size = vocab_size
    model = LocalizationModel(config.model)
    model.apply_freeze(config.freeze)
    return model


def train(config: TrainConfig, samples, model: LocalizationModel = None, vocab=None,
          checkpoint_path=None, log_every=0) -> TrainResult:
    """Momentum SGD with warmup + cosine decay over minibatches of videos."""
    trainer = Trainer(config, samples, vocab)
    if model is None:
        model = build_model(config, len(trainer.vocab))
    else:
        model.apply_freeze(config.freeze)
    torch.manual_seed(config.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    frozen = {k: v.detach().clone() for k, v in model.named_parameters() if not v.requires_grad}
    opt = torch.optim.SGD(params, lr=config.lr, momentum=config.momentum,
                          weight_decay=config.weight_decay) if params else None
    curve = []
    n = len(trainer.samples)
    order = trainer.rng.permutation(n)
    pos = 0
    model.train()
    for step in range(config.steps):
        if pos + config.batch_size > n:
            order, pos = trainer.rng.permutation(n), 0
        idx = order[pos:pos + config.batch_size]
        pos += config.batch_size
        batch = trainer.make_batch(idx)
        lb = batch_loss(model, batch)
        if not torch.isfinite(lb.total):
            cls_v, reg_v, _ = lb.as_floats()
            raise TrainingDiverged(
                f"non-finite loss at step {step}: cls={cls_v} reg={reg_v} "
                f"n_pos={lb.n_pos} lr={_lr_at(config, step):.4g}")
        curve.append((step, *lb.as_floats()))
        if opt is not None:
            for g in opt.param_groups:
                g["lr"] = _lr_at(config, step)
            opt.zero_grad(set_to_none=True)
            lb.total.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            opt.step()
        if log_every and step % log_every == 0:
            log.info("step %d cls %.4f reg %.4f total %.4f", step, *curve[-1][1:])
    for k, v in model.named_parameters():
        if k in frozen and not torch.equal(frozen[k], v):
            raise RuntimeError(f"frozen parameter {k} changed during training")
    model.eval()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, trainer.vocab, config)
    return TrainResult(model, trainer.vocab, curve)


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(path, model: LocalizationModel, vocab: Vocabulary, config: TrainConfig = None):
    """npz container: named float32 parameter arrays + a JSON metadata entry."""
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {"format_version": CHECKPOINT_VERSION, "model_config": model.config.to_dict(),
            "vocab": vocab.to_list(), "freeze": asdict(model.freeze),
            "train_config": config.to_dict() if config is not None else None}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path):
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('format_version')}")
        state = {k[len("param/"):]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith("param/")}
    config = ModelConfig.from_dict(meta["model_config"])
    model = LocalizationModel(config)
    model.load_state_dict(state)
    model.apply_freeze(FreezePolicy(**meta["freeze"]))
    model.eval()
    tc = TrainConfig.from_dict(meta["train_config"]) if meta.get("train_config") else None
    return model, Vocabulary.from_list(meta["vocab"]), tc


# --------------------------------------------------------------------------- pretraining

def make_pretrain_clips(samples, clip_frames=32):
    """Trimmed single-label clips cut from the events of localization samples."""
    clips = []
    for s in samples:
        for seg in s.segments:
            lo, hi = int(math.ceil(seg.start)), int(math.floor(seg.end))
            if hi - lo + 1 < 2:
                continue
            idx = np.floor(np.linspace(lo, hi, clip_frames) + 0.5).astype(np.int64)
            clips.append((s.frames[idx], seg.class_id))
    return clips


def multilabel_targets(label, n_classes):
    t = np.zeros(n_classes, dtype=np.float32)
    if label is not None:
        t[label] = 1.0
    return t


def pretrain_multilabel(config: TrainConfig, clips, class_names, model=None, vocab=None, steps=None):
    """Clip-level binary classification against every class name.

    The text encoder is frozen and the image encoder finetuned throughout.
    Returns (model, vocab, losses).
    """
    prompts = PromptSet(config.prompts)
    vocab = vocab or build_vocabulary(class_names, prompts)
    if model is None:
        model = build_model(config, len(vocab))
    model.apply_freeze(FreezePolicy(image_encoder="finetuned", text_encoder="frozen"))
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    C = len(class_names)
    ids, mask = pad_token_ids([vocab.encode(prompts.render(c)) for c in class_names], config.model.T_max)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.SGD(params, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    steps = config.steps if steps is None else steps
    losses = []
    model.train()
    for step in range(steps):
        pick = rng.integers(len(clips), size=config.batch_size)
        raw = torch.as_tensor(np.stack([clips[i][0] for i in pick]), dtype=torch.float32)
        fmask = torch.ones(raw.shape[:2], dtype=torch.bool)
        pv = torch.arange(len(pick)).repeat_interleave(C)
        text = model.encode_texts(ids.repeat(len(pick), 1), mask.repeat(len(pick), 1))
        logits = model.clip_logits(raw, fmask, pv, text)
        target = torch.as_tensor(np.concatenate([multilabel_targets(clips[i][1], C) for i in pick]))
        loss = F.binary_cross_entropy_with_logits(logits, target)
        for g in opt.param_groups:
            g["lr"] = config.lr * min(1.0, (step + 1) / max(config.warmup_steps, 1))
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, config.grad_clip or 1e9)
        opt.step()
        losses.append(float(loss.detach()))
    model.eval()
    return model, vocab, losses
