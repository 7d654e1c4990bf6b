"""Video-text fusion: frame tokens concatenated with text tokens, one encoder."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .core import TEXT_MODES, InputError
from .encoders import FrameTokens, TextTokens


@dataclass
class FusedFrameTokens:
    x: torch.Tensor  # (N, K)
    class_id: int


class EncoderBlock(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, width, heads, mlp_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, mlp_dim), nn.GELU(), nn.Linear(mlp_dim, width))

    def forward(self, x, pad_mask):
        h = self.norm1(x)
        h, _ = self.attn(h, h, h, key_padding_mask=pad_mask, need_weights=False)
        x = x + h
        return x + self.mlp(self.norm2(x))

    def zero_output_projections(self):
        nn.init.zeros_(self.attn.out_proj.weight)
        nn.init.zeros_(self.attn.out_proj.bias)
        nn.init.zeros_(self.mlp[-1].weight)
        nn.init.zeros_(self.mlp[-1].bias)


class FusionModule(nn.Module):
    def __init__(self, width, n_frames, max_text, layers=2, heads=4, mlp_dim=64):
        super().__init__()
        self.width, self.n_frames, self.max_text = width, n_frames, max_text
        self.pos = nn.Parameter(torch.randn(n_frames + max_text, width) * 0.02)
        self.blocks = nn.ModuleList(EncoderBlock(width, heads, mlp_dim) for _ in range(layers))

    def forward(self, frames, frame_mask, text=None, text_mask=None):
        """frames (B, N, K), text (B, T, K) or None. Returns the N frame rows."""
        B, N, K = frames.shape
        if K != self.width or (text is not None and text.shape[-1] != self.width):
            raise InputError(f"token width mismatch: expected {self.width}")
        if N > self.n_frames:
            raise InputError(f"{N} frames exceed positional table of {self.n_frames}")
        x = frames + self.pos[:N]
        valid = frame_mask
        if text is not None:
            T = text.shape[1]
            if T > self.max_text:
                raise InputError(f"{T} text tokens exceed T_max={self.max_text}")
            x = torch.cat([x, text + self.pos[self.n_frames:self.n_frames + T]], dim=1)
            valid = torch.cat([frame_mask, text_mask], dim=1)
        pad = ~valid.bool()
        for blk in self.blocks:
            x = blk(x, pad)
        return x[:, :N]


def select_text(text: TextTokens, mode):
    """Text rows fed to fusion for ``mode``: (tokens, mask) or (None, None)."""
    if mode not in TEXT_MODES:
        raise InputError(f"unknown text mode {mode!r}")
    if mode == "no-text":
        return None, None
    if mode == "cls-only":
        cls = text.cls()[..., None, :]
        return cls, torch.ones(cls.shape[:-1], dtype=torch.bool)
    return text.tokens, text.mask


def fuse(frames: FrameTokens, text: TextTokens, mode, module: FusionModule, class_id=0) -> FusedFrameTokens:
    if frames.tokens.dim() != 2:
        raise InputError("fuse takes a single clip; use fuse_per_class for several texts")
    t, tm = select_text(text, mode) if text is not None else (None, None)
    x = module(frames.tokens[None], frames.mask[None],
               None if t is None else t[None], None if tm is None else tm[None])
    return FusedFrameTokens(x[0], class_id)


def fuse_per_class(frames: FrameTokens, texts, mode, module: FusionModule):
    """One fused X^c per text, batched along a class axis with shared weights."""
    if not texts:
        raise InputError("need at least one text")
    C = len(texts)
    f = frames.tokens[None].expand(C, -1, -1)
    fm = frames.mask[None].expand(C, -1)
    if mode == "no-text":
        x = module(f, fm)
    else:
        sel = [select_text(t, mode) for t in texts]
        T = max(s[0].shape[0] for s in sel)
        tok = frames.tokens.new_zeros(C, T, frames.width)
        msk = torch.zeros(C, T, dtype=torch.bool)
        for c, (t, m) in enumerate(sel):
            tok[c, :t.shape[0]] = t
            msk[c, :m.shape[0]] = m
        x = module(f, fm, tok, msk)
    return [FusedFrameTokens(x[c], c) for c in range(C)]
