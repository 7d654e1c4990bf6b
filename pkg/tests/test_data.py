import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from vidloc.core import ConfigError, Segment
from vidloc.data import (AnnotationError, PromptSet, SyntheticSpec, TaskSample, annotations_doc,
                         apply_prompts, build_vocabulary, class_signatures, ensemble_embeddings,
                         generate_synthetic, load_dataset, parse_annotations, read_annotations,
                         sample_frames, save_dataset, split_labels)
from vidloc.encoders import TextEncoder


def test_noiseless_frames_are_signatures():
    spec = SyntheticSpec(n_videos=3, noise_std=0.0, allow_overlap=False, seed=3)
    samples, names = generate_synthetic(spec)
    sig = class_signatures(spec.n_classes, spec.feature_dim, np.random.default_rng(spec.signature_seed))
    for s in samples:
        labels = s.frame_labels()
        for i in range(s.n_frames):
            expect = sig[-1] if labels[i] < 0 else sig[labels[i]]
            np.testing.assert_array_equal(s.frames[i], expect)
    assert names == ["archery", "baking", "cycling"]


def test_generation_is_deterministic():
    a, _ = generate_synthetic(SyntheticSpec(n_videos=4, seed=7))
    b, _ = generate_synthetic(SyntheticSpec(n_videos=4, seed=7))
    c, _ = generate_synthetic(SyntheticSpec(n_videos=4, seed=8))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.frames, y.frames)
        assert x.segments == y.segments
    assert any(x.segments != y.segments for x, y in zip(a, c))


@pytest.mark.parametrize("task", ["tal", "mr", "as"])
def test_segments_inside_video(task):
    samples, _ = generate_synthetic(SyntheticSpec(task=task, n_videos=20, seed=1))
    for s in samples:
        assert s.segments
        for seg in s.segments:
            assert 0 <= seg.start <= seg.end <= s.n_frames - 1
            assert 0 <= seg.class_id < len(s.texts)


@pytest.mark.parametrize("bg", [0.2, 0.5, 0.8])
def test_segmentation_background_fraction(bg):
    samples, _ = generate_synthetic(SyntheticSpec(task="as", n_videos=10, background_fraction=bg, seed=2))
    for s in samples:
        frac = float(np.mean(s.frame_labels() < 0))
        assert abs(frac - bg) <= 0.02


def test_mr_one_caption_per_event():
    samples, names = generate_synthetic(SyntheticSpec(task="mr", n_videos=30, events_per_video=(2, 2), seed=4))
    for s in samples:
        assert len(s.texts) == 2 == len(s.segments)
        assert sorted(seg.class_id for seg in s.segments) == [0, 1]
        assert all(any(n in t for n in names) for t in s.texts)


@given(st.integers(0, 10_000), st.integers(1, 4))
@settings(max_examples=20, deadline=None)
def test_mr_captions_name_distinct_classes(seed, n_classes):
    samples, names = generate_synthetic(SyntheticSpec(task="mr", n_videos=4, n_classes=n_classes, seed=seed))
    for s in samples:
        said = [next(n for n in names if n in t.split()) for t in s.texts]
        assert len(set(said)) == len(said) <= n_classes


def test_spec_validation():
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(task="xx"))
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(n_classes=16, feature_dim=16))
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(background_fraction=1.0))


def _sample(n, segs=(), dim=4):
    return TaskSample("v", "tal", ["a"], list(segs), 1.0, n, np.arange(n * dim, dtype=np.float32).reshape(n, dim))


def test_consecutive_padding():
    clip = sample_frames(_sample(300), "consecutive_padded", 512, start=0)
    assert clip.frames.shape == (512, 4)
    assert clip.mask.sum() == 300 and not clip.mask[300:].any()
    assert not clip.frames[300:].any()


def test_consecutive_window_clips_segments():
    s = _sample(300, [Segment(90, 130, 0), Segment(10, 20, 0)])
    clip = sample_frames(s, "consecutive_padded", 64, start=100)
    assert clip.segments == [Segment(0.0, 30.0, 0)]
    np.testing.assert_array_equal(clip.frames[0], s.frames[100])
    assert clip.to_source(5.0) == 105.0


def test_evenly_spaced_remap_example():
    clip = sample_frames(_sample(400, [Segment(100, 200, 0)]), "evenly_spaced", 128)
    seg = clip.segments[0]
    assert seg.start == pytest.approx(31.83, abs=0.005)
    assert seg.end == pytest.approx(63.66, abs=0.005)
    assert (round(seg.start), round(seg.end)) == (32, 64)
    assert clip.to_source(seg.start) == pytest.approx(100.0)
    assert clip.mask.all() and len(clip.frames) == 128


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 600), st.integers(2, 256), st.data())
def test_evenly_spaced_containment(n_src, n, data):
    s = data.draw(st.integers(0, n_src - 1))
    e = data.draw(st.integers(s, n_src - 1))
    clip = sample_frames(_sample(n_src, [Segment(s, e, 0)]), "evenly_spaced", n)
    seg = clip.segments[0]
    assert 0 <= seg.start <= seg.end <= n - 1 + 1e-9
    for t in clip.to_source(np.arange(n)):
        inside_src = s <= t <= e
        inside_clip = seg.start <= (t - clip.offset) / clip.step <= seg.end
        assert inside_src == inside_clip or abs(t - s) < 1e-9 or abs(t - e) < 1e-9


def test_sampling_errors():
    with pytest.raises(ConfigError):
        sample_frames(_sample(10), "random", 4)
    with pytest.raises(ConfigError):
        sample_frames(_sample(10), "evenly_spaced", 0)


def test_prompt_templates_validated():
    with pytest.raises(ConfigError):
        PromptSet(("no slot here",))
    with pytest.raises(ConfigError):
        PromptSet(("{label} and {label}",))
    with pytest.raises(ConfigError):
        PromptSet(())
    assert PromptSet(("a {label} clip",)).render("diving") == "a diving clip"


def test_ensemble_identical_members_is_exact():
    e = torch.randn(8)
    assert torch.equal(ensemble_embeddings(torch.stack([e, e, e])), e)


def test_ensemble_norm():
    embs = torch.randn(4, 8)
    out = ensemble_embeddings(embs)
    assert float(out.norm()) == pytest.approx(float(embs.norm(dim=-1).mean()), rel=1e-6)
    cos = torch.nn.functional.cosine_similarity(out, embs.mean(0), dim=0)
    assert float(cos) == pytest.approx(1.0, abs=1e-6)


def test_apply_prompts_single_template_equals_ensemble():
    torch.manual_seed(0)
    enc = TextEncoder(64, 8, 16)
    prompts = PromptSet(("a person {label}",))
    vocab = build_vocabulary(["diving"], prompts)
    plain = apply_prompts("diving", prompts, enc, vocab, 16)
    ens = apply_prompts("diving", prompts, enc, vocab, 16, ensemble=True)
    assert torch.equal(plain.tokens, ens.tokens)
    multi = apply_prompts("diving", PromptSet(), enc, build_vocabulary(["diving"], PromptSet()), 16, ensemble=True)
    assert multi.tokens.shape == plain.tokens.shape


def test_split_labels_disjoint():
    tr, te = split_labels(list("abcdefgh"), 0.5, seed=1)
    assert len(tr) == len(te) == 4 and not set(tr) & set(te)
    assert split_labels(list("abcdefgh"), 0.5, seed=1) == (tr, te)


def _doc():
    return {"task": "tal", "classes": ["diving", "rowing"], "videos": [
        {"id": "b", "duration_sec": 10.0, "fps": 2.0,
         "segments": [{"start_sec": 1.0, "end_sec": 3.0, "label": "rowing"}]},
        {"id": "a", "duration_sec": 5, "fps": 2,
         "segments": [{"start_sec": 0, "end_sec": 5, "label": "diving"}]},
    ]}


def test_parse_annotations():
    task, classes, samples = parse_annotations(_doc())
    assert task == "tal" and classes == ["diving", "rowing"]
    assert [s.video_id for s in samples] == ["a", "b"]
    assert samples[1].segments == [Segment(2.0, 6.0, 1)]
    assert samples[1].n_frames == 20


@pytest.mark.parametrize("mutate,needle", [
    (lambda d: d.pop("task"), "'task'"),
    (lambda d: d["videos"][1].pop("fps"), "videos[1]"),
    (lambda d: d["videos"][0]["segments"][0].update(start_sec="x"), "videos[0].segments[0]"),
    (lambda d: d["videos"][0]["segments"][0].update(end_sec=11.0), "outside"),
    (lambda d: d["videos"][0]["segments"][0].update(label="golf"), "unknown label"),
    (lambda d: d["videos"][1].update(id="b"), "duplicate"),
    (lambda d: d.update(classes=[]), "'classes'"),
])
def test_annotation_errors(mutate, needle):
    doc = _doc()
    mutate(doc)
    with pytest.raises(AnnotationError, match=None) as exc:
        parse_annotations(doc)
    assert needle in str(exc.value)


def test_bad_json(tmp_path):
    p = tmp_path / "a.json"
    p.write_text("{not json")
    with pytest.raises(AnnotationError):
        read_annotations(p)


@pytest.mark.parametrize("task", ["tal", "mr"])
def test_dataset_roundtrip(tmp_path, task):
    samples, names = generate_synthetic(SyntheticSpec(task=task, n_videos=3, seed=5))
    save_dataset(tmp_path, task, names, samples)
    t2, c2, back = load_dataset(tmp_path)
    assert t2 == task
    for a, b in zip(samples, back):
        assert a.video_id == b.video_id and a.texts == b.texts and a.n_frames == b.n_frames
        np.testing.assert_array_equal(a.frames, b.frames)
        for x, y in zip(a.segments, b.segments):
            assert (x.start, x.end, x.class_id) == pytest.approx((y.start, y.end, y.class_id))
    json.dumps(annotations_doc(task, names, samples))


def test_datasets_share_class_signatures():
    a, _ = generate_synthetic(SyntheticSpec(n_videos=2, noise_std=0.0, seed=1))
    b, _ = generate_synthetic(SyntheticSpec(n_videos=2, noise_std=0.0, seed=2))
    bg_a = a[0].frames[a[0].frame_labels() < 0][0]
    bg_b = b[0].frames[b[0].frame_labels() < 0][0]
    np.testing.assert_array_equal(bg_a, bg_b)
