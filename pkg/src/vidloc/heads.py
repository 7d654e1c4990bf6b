"""Relevancy and displacement heads, shared across pyramid levels."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .core import InputError


@dataclass
class DensePredictions:
    """Per level: logits (P, N_l) and displacements (P, N_l, 2) for P pairs."""
    logits: list
    displacements: list
    strides: tuple

    @property
    def total(self):
        return sum(l.numel() for l in self.logits)


class ConvBlock(nn.Module):
    """LayerNorm -> same-length 1D conv (kernel 3, zero padding) -> ReLU."""

    def __init__(self, width, kernel_size=3):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.conv = nn.Conv1d(width, width, kernel_size, padding=kernel_size // 2)
        nn.init.normal_(self.conv.weight, std=0.02)
        nn.init.zeros_(self.conv.bias)

    def forward(self, x, mask=None):
        h = self.norm(x)
        if mask is not None:
            h = h * mask[..., None].to(h.dtype)
        h = self.conv(h.transpose(-1, -2)).transpose(-1, -2)
        return F.relu(h)


def apply_conv_blocks(x, blocks, mask=None):
    for blk in blocks:
        x = blk(x, mask)
    return x


def classification_head(z, w_cls, b_cls):
    """z (..., N, K) @ w_cls (K, 1) + b_cls -> (..., N, 1)."""
    if z.shape[-1] != w_cls.shape[0]:
        raise InputError("head width mismatch")
    return z @ w_cls + b_cls


def regression_head(z, w_reg, b_reg):
    """relu(z @ w_reg + b_reg) -> (..., N, 2), always >= 0."""
    if z.shape[-1] != w_reg.shape[0]:
        raise InputError("head width mismatch")
    return F.relu(z @ w_reg + b_reg)


def no_text_heads(z, W_cls, b_cls, W_reg, b_reg, mode="no-text"):
    """All-class projections for the text-free variant: (N, C) logits and (N, 2C) displacements."""
    if mode != "no-text":
        raise InputError("no_text_heads only applies when no text is fused")
    C = W_cls.shape[1]
    if W_reg.shape[1] != 2 * C:
        raise InputError("W_reg must have 2C columns")
    return z @ W_cls + b_cls, F.relu(z @ W_reg + b_reg)


class LocalizationHeads(nn.Module):
    """Two parameter-disjoint towers of M conv blocks, each ending in a linear map.

    ``n_classes=0`` gives the per-text heads (one logit and one displacement
    pair per cell); ``n_classes=C`` gives the text-free all-class heads.
    """

    def __init__(self, width, n_blocks=3, prior_bias=-2.0, n_classes=0, reg_bias=1.0):
        super().__init__()
        self.n_classes = n_classes
        out_c = max(n_classes, 1)
        self.cls_blocks = nn.ModuleList(ConvBlock(width) for _ in range(n_blocks))
        self.reg_blocks = nn.ModuleList(ConvBlock(width) for _ in range(n_blocks))
        self.w_cls = nn.Parameter(torch.randn(width, out_c) * 0.02)
        self.b_cls = nn.Parameter(torch.full((out_c,), float(prior_bias)))
        self.w_reg = nn.Parameter(torch.randn(width, 2 * out_c) * 0.02)
        self.b_reg = nn.Parameter(torch.full((2 * out_c,), float(reg_bias)))

    def cls_features(self, x, mask=None):
        return apply_conv_blocks(x, self.cls_blocks, mask)

    def reg_features(self, x, mask=None):
        return apply_conv_blocks(x, self.reg_blocks, mask)

    def forward_level(self, x, mask=None, with_regression=True):
        """x (B, N_l, K) -> logits (B, N_l[, C]) and displacements (B, N_l[, C], 2)."""
        zc = self.cls_features(x, mask)
        if self.n_classes:
            logits = zc @ self.w_cls + self.b_cls
            dt = None
            if with_regression:
                dt = F.relu(self.reg_features(x, mask) @ self.w_reg + self.b_reg)
                dt = dt.reshape(*dt.shape[:-1], self.n_classes, 2)
            return logits, dt
        logits = classification_head(zc, self.w_cls, self.b_cls)[..., 0]
        dt = regression_head(self.reg_features(x, mask), self.w_reg, self.b_reg) if with_regression else None
        return logits, dt

    def forward(self, pyramid, with_regression=True) -> DensePredictions:
        logits, dts = [], []
        for x, m in zip(pyramid.levels, pyramid.masks):
            lg, dt = self.forward_level(x, m, with_regression)
            logits.append(lg)
            dts.append(dt)
        return DensePredictions(logits, dts, tuple(pyramid.strides))


class LateFusionScorer(nn.Module):
    """Relevancy as scaled cosine between head features and a text embedding."""

    def __init__(self, init_scale=10.0, init_bias=-2.0):
        super().__init__()
        self.log_scale = nn.Parameter(torch.tensor(float(init_scale)).log())
        self.bias = nn.Parameter(torch.tensor(float(init_bias)))

    def forward(self, z, text_emb):
        """z (B, N, K), text_emb (B, C, K) -> logits (B, C, N)."""
        zn = F.normalize(z, dim=-1)
        tn = F.normalize(text_emb, dim=-1)
        return self.log_scale.exp() * torch.einsum("bnk,bck->bcn", zn, tn) + self.bias
