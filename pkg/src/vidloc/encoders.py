"""Frame and text encoders plus the binary feature-file format.

The stub encoders are small trainable maps that stand in for an image/text
two-tower model. Precomputed per-frame features can be loaded from ``.ulft``
files instead.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import InputError

FEATURE_MAGIC = b"ULFT"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FeatureFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class FrameTokens:
    tokens: torch.Tensor  # (..., N, K)
    mask: torch.Tensor    # (..., N) bool, True = valid frame

    @property
    def n(self):
        return self.tokens.shape[-2]

    @property
    def width(self):
        return self.tokens.shape[-1]


@dataclass
class TextTokens:
    tokens: torch.Tensor     # (..., T, K)
    mask: torch.Tensor       # (..., T) bool
    cls_index: torch.Tensor  # (...) long

    def cls(self):
        idx = self.cls_index[..., None, None].expand(*self.cls_index.shape, 1, self.tokens.shape[-1])
        return self.tokens.gather(-2, idx).squeeze(-2)


class IdentityEncoder(nn.Module):
    """Passes raw features through unchanged; useful for precomputed features."""

    def __init__(self, width):
        super().__init__()
        self.in_dim = self.out_dim = width

    def forward(self, x):
        return x


class FrameEncoder(nn.Module):
    """Two-layer per-frame MLP from raw features to width K."""

    def __init__(self, in_dim, width):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, width
        self.net = nn.Sequential(nn.Linear(in_dim, width), nn.GELU(), nn.Linear(width, width))

    def forward(self, x):
        return self.net(x)


class Vocabulary:
    """Whitespace word vocabulary. Id 0 is padding, id 1 unknown."""

    PAD, UNK = 0, 1

    def __init__(self, words=()):
        self.index = {"<pad>": 0, "<unk>": 1}
        for w in words:
            self.add(w)

    def add(self, word):
        if word not in self.index:
            self.index[word] = len(self.index)
        return self.index[word]

    def __len__(self):
        return len(self.index)

    @staticmethod
    def split(text):
        return re.findall(r"[a-z0-9]+", text.lower())

    def encode(self, text):
        return [self.index.get(w, self.UNK) for w in self.split(text)]

    def to_list(self):
        return sorted(self.index, key=self.index.get)

    @classmethod
    def from_list(cls, words):
        v = cls()
        for w in words[2:]:
            v.add(w)
        return v


class TextEncoder(nn.Module):
    """Token embedding + position, a per-token two-layer MLP, and a summary token.

    The summary (CLS) row sits at the last valid position and encodes the
    masked mean of all token features, so it represents the whole sequence.
    """

    def __init__(self, vocab_size, width, max_tokens=32):
        super().__init__()
        self.out_dim = width
        self.max_tokens = max_tokens
        self.embed = nn.Embedding(vocab_size, width, padding_idx=Vocabulary.PAD)
        self.pos = nn.Parameter(torch.randn(max_tokens, width) * 0.02)
        self.mlp = nn.Sequential(nn.Linear(width, width), nn.GELU(), nn.Linear(width, width))
        self.summary = nn.Linear(width, width)
        self.empty = nn.Parameter(torch.randn(width) * 0.02)

    def forward(self, ids, mask):
        """ids, mask: (B, T). Rows with no valid token get the ``empty`` embedding."""
        B, T = ids.shape
        empty_rows = ~mask.any(-1)
        h = self.mlp(self.embed(ids) + self.pos[:T])
        m = mask.to(h.dtype)[..., None]
        mean = (h * m).sum(-2) / m.sum(-2).clamp(min=1)
        summary = self.summary(mean)
        summary = torch.where(empty_rows[:, None], self.empty.expand(B, -1), summary)
        lengths = mask.sum(-1)
        cls_index = (lengths - 1).clamp(min=0)
        onehot = torch.nn.functional.one_hot(cls_index, T).to(h.dtype)[..., None]
        h = h * (1 - onehot) + summary[:, None, :] * onehot
        full_mask = mask.clone()
        full_mask[empty_rows, 0] = True
        h = h * full_mask.to(h.dtype)[..., None]
        return h, full_mask, cls_index


@dataclass
class EncoderPair:
    frame_encoder: nn.Module
    text_encoder: nn.Module
    paired: bool = True

    def __post_init__(self):
        if self.frame_encoder.out_dim != self.text_encoder.out_dim:
            raise InputError("frame and text encoders must emit the same width")


def encode_frames(raw, encoder, freeze=False, mask=None) -> FrameTokens:
    """Encode per-frame raw features ``(..., N, D)``; padded rows come out zero."""
    raw = torch.as_tensor(raw, dtype=torch.float32)
    if raw.shape[-1] != encoder.in_dim:
        raise InputError(f"raw width {raw.shape[-1]} != encoder input width {encoder.in_dim}")
    if mask is None:
        mask = torch.ones(raw.shape[:-1], dtype=torch.bool)
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if freeze:
        with torch.no_grad():
            tokens = encoder(raw)
    else:
        tokens = encoder(raw)
    tokens = tokens * mask[..., None].to(tokens.dtype)
    return FrameTokens(tokens, mask)


def pad_token_ids(id_lists, max_tokens):
    """Right-truncate / right-pad id sequences to ``max_tokens``."""
    ids = torch.zeros(len(id_lists), max_tokens, dtype=torch.long)
    mask = torch.zeros(len(id_lists), max_tokens, dtype=torch.bool)
    for i, seq in enumerate(id_lists):
        seq = list(seq)[:max_tokens]
        if seq:
            ids[i, :len(seq)] = torch.as_tensor(seq, dtype=torch.long)
            mask[i, :len(seq)] = True
    return ids, mask


def encode_text(text_ids, encoder, max_tokens, freeze=False) -> TextTokens:
    """Encode one id sequence or a list of them into ``TextTokens``.

    Sequences longer than ``max_tokens`` are truncated from the right; an
    empty sequence yields a single valid summary token.
    """
    batched = len(text_ids) > 0 and not isinstance(text_ids[0], (int, np.integer))
    id_lists = text_ids if batched else [text_ids]
    ids, mask = pad_token_ids(id_lists, max_tokens)
    if freeze:
        with torch.no_grad():
            h, m, cls_index = encoder(ids, mask)
    else:
        h, m, cls_index = encoder(ids, mask)
    if not batched:
        h, m, cls_index = h[0], m[0], cls_index[0]
    return TextTokens(h, m, cls_index)


def write_features(path, tokens, mask=None):
    tokens = np.asarray(tokens, dtype="<f4")
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise InputError("feature array must be N x K with N >= 1")
    n, k = tokens.shape
    if mask is None:
        mask = np.ones(n, dtype=np.uint8)
    mask = np.asarray(mask).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, k))
        f.write(np.ascontiguousarray(tokens).tobytes())
        f.write(mask.tobytes())


def load_precomputed_features(path) -> FrameTokens:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FeatureFormatError("truncated header", len(data))
    magic, version, n, k = _HEADER.unpack_from(data, 0)
    if magic != FEATURE_MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r}", 0)
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"unsupported version {version}", 4)
    if n < 1:
        raise FeatureFormatError("N must be >= 1", 8)
    if k < 1:
        raise FeatureFormatError("K must be >= 1", 12)
    off = _HEADER.size
    payload = n * k * 4
    if len(data) < off + payload:
        raise FeatureFormatError(f"payload needs {payload} bytes, found {len(data) - off}", len(data))
    tokens = np.frombuffer(data, dtype="<f4", count=n * k, offset=off).reshape(n, k)
    off += payload
    if len(data) != off + n:
        raise FeatureFormatError(f"mask needs {n} bytes, found {len(data) - off}", min(len(data), off + n))
    mask = np.frombuffer(data, dtype=np.uint8, count=n, offset=off)
    if np.any(mask > 1):
        bad = int(np.argmax(mask > 1))
        raise FeatureFormatError("mask bytes must be 0 or 1", off + bad)
    return FrameTokens(torch.from_numpy(tokens.astype(np.float32)), torch.from_numpy(mask.astype(bool)))
