"""End-to-end localization model: encoders -> fusion -> pyramid -> heads."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .core import ConfigError, InputError, ModelConfig
from .encoders import FrameEncoder, TextEncoder, TextTokens
from .fusion import FusionModule, select_text
from .heads import DensePredictions, LateFusionScorer, LocalizationHeads
from .pyramid import FeaturePyramid

FROZEN, FINETUNED = "frozen", "finetuned"


@dataclass
class FreezePolicy:
    image_encoder: str = FINETUNED
    text_encoder: str = FINETUNED

    def __post_init__(self):
        for v in (self.image_encoder, self.text_encoder):
            if v not in (FROZEN, FINETUNED):
                raise ConfigError(f"freeze setting must be {FROZEN!r} or {FINETUNED!r}, got {v!r}")


class LocalizationModel(nn.Module):
    """Per (video, text) pair dense relevancy and displacement predictor.

    Variants follow the config: ``text_mode`` picks how text enters fusion
    (``no-text`` switches to all-class heads), ``late_fusion`` replaces fused
    relevancy with a cosine score against the text summary embedding.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.frame_encoder = FrameEncoder(c.raw_dim, c.K)
        self.text_encoder = TextEncoder(c.vocab_size, c.K, c.T_max)
        self.fusion = FusionModule(c.K, c.N, c.T_max, c.fusion_layers, c.fusion_heads, c.fusion_mlp_dim)
        self.pyramid = FeaturePyramid(c.K, c.L, c.pyramid_style, c.regression_ranges)
        n_cls = c.n_classes if c.text_mode == "no-text" else 0
        if c.text_mode == "no-text" and n_cls < 1:
            raise ConfigError("no-text variant needs n_classes >= 1")
        self.heads = LocalizationHeads(c.K, c.M, c.cls_prior_bias, n_classes=n_cls)
        self.late = LateFusionScorer(init_bias=c.cls_prior_bias) if c.late_fusion else None
        self.freeze = FreezePolicy()

    @property
    def uses_text(self):
        return self.config.text_mode != "no-text"

    def apply_freeze(self, policy: FreezePolicy):
        self.freeze = policy
        for p in self.frame_encoder.parameters():
            p.requires_grad_(policy.image_encoder == FINETUNED)
        for p in self.text_encoder.parameters():
            p.requires_grad_(policy.text_encoder == FINETUNED)

    def encode_frames(self, raw):
        if self.freeze.image_encoder == FROZEN:
            with torch.no_grad():
                return self.frame_encoder(raw)
        return self.frame_encoder(raw)

    def encode_texts(self, ids, mask) -> TextTokens:
        if self.freeze.text_encoder == FROZEN:
            with torch.no_grad():
                h, m, ci = self.text_encoder(ids, mask)
        else:
            h, m, ci = self.text_encoder(ids, mask)
        return TextTokens(h, m, ci)

    def forward(self, raw, frame_mask, pair_video, text: TextTokens = None, n_levels=None,
                with_regression=True) -> DensePredictions:
        """raw (B, N, D) frame features; ``pair_video`` (P,) maps pairs to videos.

        Returns logits (P, N_l) and displacements (P, N_l, 2) per level. For the
        no-text variant pair p is read as class ``text`` index p within its
        video, so pairs must enumerate all classes of each video in order.
        """
        if raw.shape[-1] != self.config.raw_dim:
            raise InputError(f"raw feature width {raw.shape[-1]} != {self.config.raw_dim}")
        frame_mask = frame_mask.bool()
        frames = self.encode_frames(raw) * frame_mask[..., None].to(raw.dtype)
        pair_video = torch.as_tensor(pair_video, dtype=torch.long)
        c = self.config
        if c.text_mode == "no-text" or c.late_fusion:
            x = self.fusion(frames, frame_mask)
            pyr = self.pyramid(x, frame_mask, n_levels)
            if c.late_fusion:
                return self._late(pyr, pair_video, text, with_regression)
            return self._no_text(pyr, pair_video, with_regression)
        if text is None:
            raise InputError("text-fused model needs text tokens")
        t, tm = select_text(text, c.text_mode)
        x = self.fusion(frames[pair_video], frame_mask[pair_video], t, tm)
        pyr = self.pyramid(x, frame_mask[pair_video], n_levels)
        return self.heads(pyr, with_regression)

    def _no_text(self, pyr, pair_video, with_regression):
        C = self.config.n_classes
        counts = torch.bincount(pair_video, minlength=pyr.levels[0].shape[0])
        if not torch.all((counts == 0) | (counts == C)):
            raise InputError("no-text variant needs every class paired with each video")
        class_idx = torch.zeros_like(pair_video)
        seen = {}
        for i, v in enumerate(pair_video.tolist()):
            class_idx[i] = seen.get(v, 0)
            seen[v] = seen.get(v, 0) + 1
        dense = self.heads(pyr, with_regression)
        logits = [lg[pair_video, :, class_idx] for lg in dense.logits]
        dts = [None if dt is None else dt[pair_video, :, class_idx] for dt in dense.displacements]
        return DensePredictions(logits, dts, dense.strides)

    def _late(self, pyr, pair_video, text, with_regression):
        if text is None:
            raise InputError("late fusion needs text embeddings")
        emb = text.cls()  # (P, K)
        logits, dts = [], []
        for x, m in zip(pyr.levels, pyr.masks):
            z = self.heads.cls_features(x, m)[pair_video]  # (P, N_l, K)
            logits.append(self.late(z, emb[:, None, :])[:, 0])
            if with_regression:
                dt = torch.relu(self.heads.reg_features(x, m) @ self.heads.w_reg + self.heads.b_reg)
                dts.append(dt[pair_video])
            else:
                dts.append(None)
        return DensePredictions(logits, dts, pyr.strides)

    def clip_logits(self, raw, frame_mask, pair_video, text):
        """Clip-level relevancy: mean over valid frames of level-1 logits."""
        dense = self.forward(raw, frame_mask, pair_video, text, n_levels=1, with_regression=False)
        m = frame_mask.bool()[torch.as_tensor(pair_video, dtype=torch.long)].to(dense.logits[0].dtype)
        return (dense.logits[0] * m).sum(-1) / m.sum(-1).clamp(min=1)
