"""Inference and metric computation per task."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import Segment, make_frame_grid
from .data import PromptSet, apply_prompts, sample_frames
from .decode import CandidateSet, expand, prediction_records, soft_nms, top_k
from .encoders import TextTokens
from .metrics import EvalReport, frame_accuracy, map_at_iou, recall_at_k, segmentation_map
from .targets import assign_targets


@dataclass
class DecodeConfig:
    sigma: float = 0.5
    min_score: float = 0.001
    score_threshold: float = 0.0
    pre_nms_topk: int = 200
    max_per_video: int = 100


class ModelPredictor:
    """Dense per-text outputs of a trained model for one sampled clip."""

    def __init__(self, model, vocab, prompts=("{label}",), ensemble=False):
        self.model, self.vocab = model, vocab
        self.prompts = prompts if isinstance(prompts, PromptSet) else PromptSet(prompts)
        self.ensemble = ensemble
        self.levels_read = set()

    @property
    def config(self):
        return self.model.config

    def _texts(self, sample):
        T = self.config.T_max
        enc = self.model.text_encoder
        if sample.task == "mr":
            toks = [apply_prompts(t, PromptSet(("{label}",)), enc, self.vocab, T) for t in sample.texts]
        else:
            toks = [apply_prompts(t, self.prompts, enc, self.vocab, T, ensemble=self.ensemble)
                    for t in sample.texts]
        return TextTokens(torch.stack([t.tokens for t in toks]), torch.stack([t.mask for t in toks]),
                          torch.stack([t.cls_index for t in toks]))

    @torch.no_grad()
    def dense(self, clip, sample, frame_level=False):
        self.model.eval()
        raw = torch.as_tensor(clip.frames, dtype=torch.float32)[None]
        mask = torch.as_tensor(clip.mask)[None]
        C = len(sample.texts)
        text = self._texts(sample) if self.model.uses_text else None
        out = self.model(raw, mask, torch.zeros(C, dtype=torch.long), text,
                         n_levels=1 if frame_level else None, with_regression=not frame_level)
        self.levels_read.add(len(out.logits))
        dts = [None if d is None else d.numpy() for d in out.displacements]
        return [l.numpy() for l in out.logits], dts, out.strides


class OraclePredictor:
    """Emits the assigned training targets as predictions (upper bound)."""

    def __init__(self, config, logit=20.0):
        self.config, self.logit = config, logit

    def dense(self, clip, sample, frame_level=False):
        n = len(clip.mask)
        L = 1 if frame_level else self.config.L
        grid = make_frame_grid(n, L)
        logits = [np.zeros((len(sample.texts), c)) for c in grid.counts]
        dts = [np.zeros((len(sample.texts), c, 2)) for c in grid.counts]
        for c in range(len(sample.texts)):
            gts = [s for s in clip.segments if s.class_id == c]
            tg = assign_targets(gts, grid, None if frame_level else self.config.regression_ranges,
                                clip.mask, use_ranges=not frame_level)
            for l in range(L):
                logits[l][c] = np.where(tg.y[l] > 0, self.logit, -self.logit)
                dts[l][c] = tg.dt[l]
        return logits, dts, grid.level_strides


def decode_clip(predictor, sample, decode: DecodeConfig):
    """Candidates for one video in source-frame units, plus the sampled clip."""
    N = predictor.config.N
    clip = sample_frames(sample, "evenly_spaced", N)
    logits, dts, strides = predictor.dense(clip, sample)
    cands = expand(logits, dts, strides, N, decode.score_threshold)
    if len(cands) > decode.pre_nms_topk * max(len(sample.texts), 1):
        cands = top_k(cands, decode.pre_nms_topk * len(sample.texts))
    cands = soft_nms(cands, decode.sigma, decode.min_score)
    cands.starts = clip.to_source(cands.starts)
    cands.ends = clip.to_source(cands.ends)
    return cands, clip


def evaluate(predictor, samples, task=None, decode: DecodeConfig = None, window=None) -> EvalReport:
    decode = decode or DecodeConfig()
    task = task or samples[0].task
    if task == "as":
        return _evaluate_segmentation(predictor, samples, window or predictor.config.N)
    preds, gts, queries, query_gts = [], [], [], []
    for s in samples:
        cands, _ = decode_clip(predictor, s, decode)
        for seg in s.segments:
            gts.append((s.video_id, seg))
        if task == "mr":
            for c in range(len(s.texts)):
                sub = cands.take(np.flatnonzero(cands.class_ids == c))
                queries.append(sub.take(sub.ranked()).segments)
                query_gts.append([g for g in s.segments if g.class_id == c])
        else:
            for seg in top_k(cands, decode.max_per_video).segments if len(cands) else []:
                preds.append((s.video_id, seg))
    if task == "mr":
        metrics = {}
        for k in (1, 5):
            r = recall_at_k(queries, query_gts, k, (0.5, 0.7))
            metrics[f"recall@{k}@0.5"] = r[0.5]
            metrics[f"recall@{k}@0.7"] = r[0.7]
        return EvalReport("mr", metrics)
    m5, per_class = map_at_iou(preds, gts, 0.5)
    m7, _ = map_at_iou(preds, gts, 0.7)
    return EvalReport(task, {"mAP@0.5": m5, "mAP@0.7": m7}, per_class)


def frame_scores(predictor, sample, window):
    """(n_frames, C) sigmoid relevancy from non-overlapping windows, bottom level only."""
    C = len(sample.texts)
    out = np.zeros((sample.n_frames, C))
    for start in range(0, sample.n_frames, window):
        clip = sample_frames(sample, "consecutive_padded", window, start=start)
        logits, _, _ = predictor.dense(clip, sample, frame_level=True)
        valid = int(clip.mask.sum())
        out[start:start + valid] = (1 / (1 + np.exp(-logits[0][:, :valid]))).T
    return out


def _evaluate_segmentation(predictor, samples, window):
    all_pred, all_gt, all_scores = [], [], []
    for s in samples:
        scores = frame_scores(predictor, s, window)
        pred = np.where(scores.max(1) >= 0.5, scores.argmax(1), -1)
        all_pred.append(pred)
        all_gt.append(s.frame_labels())
        all_scores.append(scores)
    gt = np.concatenate(all_gt)
    acc = frame_accuracy(np.concatenate(all_pred), gt)
    smap, per_class = segmentation_map(np.concatenate(all_scores), gt)
    return EvalReport("as", {"frame_accuracy": acc, "seg_mAP": smap}, per_class)


def majority_class_accuracy(samples):
    """Frame accuracy of always predicting the most common label (background included)."""
    gt = np.concatenate([s.frame_labels() for s in samples])
    values, counts = np.unique(gt, return_counts=True)
    return frame_accuracy(np.full_like(gt, values[np.argmax(counts)]), gt)


def predict_records(predictor, samples, decode: DecodeConfig = None):
    decode = decode or DecodeConfig()
    records = []
    for s in samples:
        cands, _ = decode_clip(predictor, s, decode)
        key = "caption_id" if s.task == "mr" else "class_id"
        records += prediction_records(s.video_id, top_k(cands, decode.max_per_video) if len(cands) else cands,
                                      1.0 / s.fps, key)
    return records
