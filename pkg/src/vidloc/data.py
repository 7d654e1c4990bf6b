"""Synthetic untrimmed videos, frame samplers, prompts and annotation files.

Geometry convention: a segment [s, e] in source-frame units covers every frame
index i with s <= i <= e.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .core import TASKS, ConfigError, InputError, Segment
from .encoders import TextTokens, Vocabulary, encode_text, load_precomputed_features, write_features


class GenerationError(RuntimeError):
    pass


class AnnotationError(ValueError):
    pass


CLASS_WORDS = [
    "archery", "baking", "cycling", "diving", "fencing", "juggling", "knitting", "rowing",
    "skating", "surfing", "welding", "yodeling", "boxing", "climbing", "dancing", "fishing",
    "golfing", "hiking", "ironing", "jogging", "kayaking", "lifting", "mopping", "painting",
]
FILLER_WORDS = ["slowly", "then", "again", "quickly", "outside", "carefully", "briefly", "twice"]
DEFAULT_TEMPLATES = (
    "a video of a person {label}",
    "a clip of someone {label}",
    "a person is {label}",
    "{label}",
)


@dataclass
class TaskSample:
    video_id: str
    task: str
    texts: list
    segments: list  # Segments in source-frame units; class_id indexes ``texts``
    fps: float = 1.0
    n_frames: int = 0
    frames: Optional[np.ndarray] = None  # (n_frames, D) raw features

    @property
    def duration_sec(self):
        return self.n_frames / self.fps

    def frame_labels(self):
        """Per source frame class id (lowest id wins on overlap), -1 for background."""
        labels = np.full(self.n_frames, -1, dtype=np.int64)
        for seg in sorted(self.segments, key=lambda s: -s.class_id):
            lo = max(int(math.ceil(seg.start)), 0)
            hi = min(int(math.floor(seg.end)), self.n_frames - 1)
            labels[lo:hi + 1] = seg.class_id
        return labels


@dataclass
class SyntheticSpec:
    task: str = "tal"
    n_videos: int = 200
    n_classes: int = 3
    frames_per_video: tuple = (160, 400)
    events_per_video: tuple = (1, 3)
    # event lengths in sampled-clip frames, one range per pyramid scale bucket
    event_lengths: tuple = ((3, 7), (9, 15), (18, 30), (36, 64))
    sampled_frames: int = 128
    feature_dim: int = 16
    noise_std: float = 0.3
    background_fraction: Optional[float] = None
    allow_overlap: bool = True
    fps: float = 2.0
    seed: int = 0
    # class appearance is shared by every dataset drawn with the same signature_seed
    signature_seed: int = 0

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.n_classes < 1 or self.n_videos < 1:
            raise ConfigError("need at least one class and one video")
        if self.n_classes + 1 > self.feature_dim:
            raise ConfigError("feature_dim must exceed n_classes for orthogonal signatures")
        if self.n_classes > len(CLASS_WORDS):
            raise ConfigError(f"at most {len(CLASS_WORDS)} synthetic classes")
        if self.background_fraction is not None and not 0.0 < self.background_fraction < 1.0:
            raise ConfigError("background_fraction must be in (0, 1)")


def class_signatures(n_classes, dim, rng):
    """Orthogonal signature rows (n_classes + 1, dim); the last row is background."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, n_classes + 1)))
    return (q.T * math.sqrt(dim)).astype(np.float32)


def class_names(n_classes):
    return [CLASS_WORDS[c] for c in range(n_classes)]


def _render(events, n_src, sig, noise_std, rng):
    dim = sig.shape[1]
    active = np.zeros((n_src, sig.shape[0] - 1), dtype=bool)
    for s, e, c in events:
        active[int(math.ceil(s)):int(math.floor(e)) + 1, c] = True
    frames = active.astype(np.float32) @ sig[:-1]
    frames[~active.any(1)] = sig[-1]
    if noise_std > 0:
        frames = frames + (noise_std * rng.standard_normal((n_src, dim))).astype(np.float32)
    return frames


def _place_events(spec, n_src, rng):
    scale = (n_src - 1) / (spec.sampled_frames - 1)
    n_events = int(rng.integers(spec.events_per_video[0], spec.events_per_video[1] + 1))
    # a caption must pick out one moment, so MR videos never repeat a class
    unique = spec.task == "mr"
    if unique:
        n_events = min(n_events, spec.n_classes)
    events = []
    for _ in range(n_events):
        for _attempt in range(200):
            lo, hi = spec.event_lengths[int(rng.integers(len(spec.event_lengths)))]
            length = max(1, int(round(rng.uniform(lo, hi) * scale)))
            if length >= n_src:
                continue
            if unique:
                free = sorted(set(range(spec.n_classes)) - {c2 for _, _, c2 in events})
                c = free[int(rng.integers(len(free)))]
            else:
                c = int(rng.integers(spec.n_classes))
            s = int(rng.integers(0, n_src - length))
            e = s + length
            clash = any(
                not (e < s2 or s > e2) and (c == c2 or not spec.allow_overlap)
                for s2, e2, c2 in events)
            if not clash:
                events.append((s, e, c))
                break
        else:
            raise GenerationError(f"could not pack {n_events} events into {n_src} frames")
    return sorted(events)


def _place_segmentation(spec, n_src, rng):
    """Non-overlapping events covering (1 - background_fraction) of the frames."""
    bg = spec.background_fraction if spec.background_fraction is not None else 0.5
    target = int(round((1 - bg) * n_src))
    lengths = []
    while sum(lengths) < target:
        lo, hi = spec.event_lengths[int(rng.integers(len(spec.event_lengths)))]
        lengths.append(int(rng.integers(lo, hi + 1)))
    lengths[-1] -= sum(lengths) - target
    lengths = [l for l in lengths if l > 0]
    if not lengths:
        return []
    rng.shuffle(lengths)
    n_bg = n_src - target
    if n_bg < 0:
        raise GenerationError("events exceed video length")
    gaps = rng.multinomial(n_bg, np.ones(len(lengths) + 1) / (len(lengths) + 1))
    events, t = [], 0
    for gap, length in zip(gaps, lengths):
        t += int(gap)
        events.append((t, t + length - 1, int(rng.integers(spec.n_classes))))
        t += length
    return events


def generate_synthetic(spec: SyntheticSpec):
    """Seeded dataset of ``TaskSample`` with planted events.

    Returns (samples, class_names). For MR, each event becomes one caption.
    """
    spec.validate()
    sig = class_signatures(spec.n_classes, spec.feature_dim, np.random.default_rng(spec.signature_seed))
    rng = np.random.default_rng(spec.seed)
    names = class_names(spec.n_classes)
    samples = []
    for v in range(spec.n_videos):
        n_src = int(rng.integers(spec.frames_per_video[0], spec.frames_per_video[1] + 1))
        if spec.task == "as":
            events = _place_segmentation(spec, n_src, rng)
        else:
            events = _place_events(spec, n_src, rng)
        frames = _render(events, n_src, sig, spec.noise_std, rng)
        if spec.task == "mr":
            texts, segs = [], []
            for i, (s, e, c) in enumerate(events):
                texts.append(make_caption(names[c], rng))
                segs.append(Segment(float(s), float(e), i))
        else:
            texts = list(names)
            segs = [Segment(float(s), float(e), c) for s, e, c in events]
        samples.append(TaskSample(f"v{v:05d}", spec.task, texts, segs, spec.fps, n_src, frames))
    return samples, names


def make_caption(label, rng):
    fill = [FILLER_WORDS[int(i)] for i in rng.integers(len(FILLER_WORDS), size=3)]
    return f"someone {fill[0]} {label} {fill[1]} {fill[2]}"


def split_labels(classes, train_fraction=0.5, seed=0):
    """Seeded disjoint (train, test) label partition for open-set evaluation."""
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(classes)))
    n_train = int(round(train_fraction * len(classes)))
    return [classes[i] for i in sorted(order[:n_train])], [classes[i] for i in sorted(order[n_train:])]


# --------------------------------------------------------------------------- sampling

@dataclass
class SampledClip:
    frames: np.ndarray       # (n, D)
    mask: np.ndarray         # (n,) bool
    segments: list           # Segments in sampled-frame units
    offset: float            # source time of sampled frame 0
    step: float              # source frames per sampled frame
    seconds_per_frame: float

    def to_source(self, t):
        return self.offset + np.asarray(t, dtype=np.float64) * self.step


def evenly_spaced_times(n_src, n):
    if n == 1 or n_src == 1:
        return np.zeros(n)
    return np.arange(n) * ((n_src - 1) / (n - 1))


def sample_frames(sample: TaskSample, mode="evenly_spaced", n=128, rng=None, start=None) -> SampledClip:
    """Sample a fixed-length clip and remap ground truth into clip indices.

    ``evenly_spaced``: n frames spread over the whole video, segment endpoints
    mapped linearly (fractional). ``consecutive_padded``: a window of n
    consecutive frames (random start unless ``start`` is given), right-padded
    and masked when the video is shorter.
    """
    if n < 1:
        raise ConfigError("need at least one sampled frame")
    if sample.n_frames < 1:
        raise InputError("empty video")
    frames = sample.frames
    spf = 1.0 / sample.fps
    if mode == "evenly_spaced":
        times = evenly_spaced_times(sample.n_frames, n)
        idx = np.floor(times + 0.5).astype(np.int64)
        step = (sample.n_frames - 1) / (n - 1) if n > 1 else 1.0
        segs = [Segment(s.start / step, s.end / step, s.class_id) for s in sample.segments] if step > 0 \
            else [Segment(0.0, 0.0, s.class_id) for s in sample.segments]
        out = frames[idx] if frames is not None else None
        return SampledClip(out, np.ones(n, dtype=bool), segs, 0.0, step if step > 0 else 1.0,
                           spf * (step if step > 0 else 1.0))
    if mode == "consecutive_padded":
        if start is None:
            rng = rng if rng is not None else np.random.default_rng()
            start = int(rng.integers(0, max(sample.n_frames - n, 0) + 1))
        valid = min(n, sample.n_frames - start)
        mask = np.zeros(n, dtype=bool)
        mask[:valid] = True
        out = None
        if frames is not None:
            out = np.zeros((n, frames.shape[1]), dtype=frames.dtype)
            out[:valid] = frames[start:start + valid]
        segs = []
        for s in sample.segments:
            a, b = s.start - start, s.end - start
            if b < 0 or a > valid - 1:
                continue
            segs.append(Segment(max(a, 0.0), min(b, valid - 1.0), s.class_id))
        return SampledClip(out, mask, segs, float(start), 1.0, spf)
    raise ConfigError(f"unknown sampling mode {mode!r}")


# --------------------------------------------------------------------------- prompts

@dataclass
class PromptSet:
    templates: tuple = DEFAULT_TEMPLATES
    ensemble_size: Optional[int] = None

    def __post_init__(self):
        self.templates = tuple(self.templates)
        if not self.templates:
            raise ConfigError("prompt set needs at least one template")
        for t in self.templates:
            if t.count("{label}") != 1:
                raise ConfigError(f"template {t!r} must contain exactly one {{label}} slot")
        if self.ensemble_size is None:
            self.ensemble_size = len(self.templates)

    def render(self, label, i=0):
        return self.templates[i].replace("{label}", label)

    def words(self):
        return [w for t in self.templates for w in Vocabulary.split(t.replace("{label}", ""))]


def apply_prompts(label, prompts: PromptSet, text_encoder, vocab, max_tokens, ensemble=False, freeze=False):
    """Text tokens for ``label`` under the first template, or the prompt-ensembled version.

    With ``ensemble`` the summary (CLS) row is replaced by the mean of the
    per-template summary embeddings, rescaled to their mean norm.
    """
    first = encode_text(vocab.encode(prompts.render(label, 0)), text_encoder, max_tokens, freeze)
    if not ensemble:
        return first
    k = min(prompts.ensemble_size, len(prompts.templates))
    ids = [vocab.encode(prompts.render(label, i)) for i in range(k)]
    enc = encode_text(ids, text_encoder, max_tokens, freeze)
    embs = enc.cls()
    ens = ensemble_embeddings(embs)
    tokens = first.tokens.clone()
    tokens[first.cls_index] = ens
    return TextTokens(tokens, first.mask, first.cls_index)


def ensemble_embeddings(embs):
    """Average of (M, K) embeddings, renormalised to the members' mean norm."""
    if all(torch.equal(embs[0], e) for e in embs[1:]):
        return embs[0]
    avg = embs.mean(0)
    return avg * (embs.norm(dim=-1).mean() / avg.norm().clamp(min=1e-12))


def build_vocabulary(texts, prompts: Optional[PromptSet] = None):
    vocab = Vocabulary()
    for t in texts:
        for w in Vocabulary.split(t):
            vocab.add(w)
    if prompts is not None:
        for w in prompts.words():
            vocab.add(w)
    for w in CLASS_WORDS + FILLER_WORDS + ["someone"]:
        vocab.add(w)
    return vocab


# --------------------------------------------------------------------------- annotation files

def _req(d, key, kind, where):
    if not isinstance(d, dict) or key not in d:
        raise AnnotationError(f"{where}: missing field {key!r}")
    v = d[key]
    if kind is float:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    else:
        ok = isinstance(v, kind)
    if not ok:
        raise AnnotationError(f"{where}: field {key!r} has wrong type {type(v).__name__}")
    return v


def parse_annotations(doc):
    task = _req(doc, "task", str, "root")
    if task not in TASKS:
        raise AnnotationError(f"root: field 'task' must be one of {TASKS}, got {task!r}")
    classes = doc.get("classes", [])
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise AnnotationError("root: field 'classes' must be a list of strings")
    if task != "mr" and not classes:
        raise AnnotationError("root: field 'classes' required for tal/as")
    videos = _req(doc, "videos", list, "root")
    out = []
    for i, v in enumerate(videos):
        where = f"videos[{i}]"
        vid = _req(v, "id", str, where)
        dur = float(_req(v, "duration_sec", float, where))
        fps = float(_req(v, "fps", float, where))
        if dur <= 0 or fps <= 0:
            raise AnnotationError(f"{where}: duration_sec and fps must be positive")
        segs_in = _req(v, "segments", list, where)
        texts = list(classes) if task != "mr" else []
        segs = []
        for j, s in enumerate(segs_in):
            sw = f"{where}.segments[{j}]"
            a = float(_req(s, "start_sec", float, sw))
            b = float(_req(s, "end_sec", float, sw))
            if not 0 <= a <= b <= dur:
                raise AnnotationError(f"{sw}: segment [{a}, {b}] outside [0, {dur}] (video {vid!r})")
            if task == "mr":
                cap = _req(s, "caption", str, sw)
                texts.append(cap)
                cid = len(texts) - 1
            else:
                label = _req(s, "label", str, sw)
                if label not in classes:
                    raise AnnotationError(f"{sw}: unknown label {label!r}")
                cid = classes.index(label)
            segs.append(Segment(a * fps, b * fps, cid))
        n_frames = max(1, int(round(dur * fps)))
        out.append(TaskSample(vid, task, texts, segs, fps, n_frames))
    ids = [s.video_id for s in out]
    if len(set(ids)) != len(ids):
        raise AnnotationError("duplicate video ids")
    return task, list(classes), sorted(out, key=lambda s: s.video_id)


def read_annotations(path):
    """Parse an annotation JSON file into sample skeletons (no features)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise AnnotationError(f"not valid JSON: {e}") from None
    return parse_annotations(doc)


def annotations_doc(task, classes, samples):
    videos = []
    for s in samples:
        segs = []
        for seg in s.segments:
            d = {"start_sec": seg.start / s.fps, "end_sec": seg.end / s.fps}
            if task == "mr":
                d["caption"] = s.texts[seg.class_id]
            else:
                d["label"] = classes[seg.class_id]
            segs.append(d)
        videos.append({"id": s.video_id, "duration_sec": s.n_frames / s.fps, "fps": s.fps, "segments": segs})
    return {"task": task, "classes": list(classes) if task != "mr" else [], "videos": videos}


def save_dataset(root, task, classes, samples):
    """Annotation JSON plus one feature file per video under ``root/features``."""
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "annotations.json").write_text(json.dumps(annotations_doc(task, classes, samples), indent=1))
    for s in samples:
        write_features(root / "features" / f"{s.video_id}.ulft", s.frames)


def load_dataset(root):
    root = Path(root)
    task, classes, samples = read_annotations(root / "annotations.json")
    out = []
    for s in samples:
        feats = load_precomputed_features(root / "features" / f"{s.video_id}.ulft")
        frames = feats.tokens.numpy()
        out.append(replace(s, frames=frames, n_frames=frames.shape[0]))
    return task, classes, out
