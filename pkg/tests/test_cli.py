import json

import pytest

from vidloc.cli import apply_overrides, load_train_config, main, parse_grid
from vidloc.core import ConfigError
from vidloc.metrics import EvalReport

TINY = ["--set", "steps=3", "--set", "batch_size=2", "--set", "model.K=16", "--set", "model.N=32",
        "--set", "model.L=2", "--set", "model.M=1", "--set", "model.fusion_layers=1"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["--output-dir", str(root), "gen-data", "--n-videos", "4", "--n-classes", "2"]) == 0
    assert main(["--output-dir", str(root / "run"), "train", "--data", str(root / "data")] + TINY) == 0
    return root


def test_pipeline_smoke(workdir):
    assert (workdir / "run" / "model.npz").exists()
    assert (workdir / "run" / "loss_curve.csv").read_text().startswith("step,cls_loss,reg_loss,total")
    assert main(["--output-dir", str(workdir / "ev"), "eval", "--data", str(workdir / "data"),
                 "--checkpoint", str(workdir / "run" / "model.npz")]) == 0
    report = EvalReport.from_json((workdir / "ev" / "report.json").read_text())
    assert report.task == "tal" and "mAP@0.5" in report.metrics


def test_single_template_ensemble_matches(workdir):
    args = ["eval", "--data", str(workdir / "data"), "--checkpoint", str(workdir / "run" / "model.npz"),
            "--prompts", "a clip of {label}"]
    assert main(["--output-dir", str(workdir / "a")] + args) == 0
    assert main(["--output-dir", str(workdir / "b")] + args + ["--ensemble-prompts"]) == 0
    assert (workdir / "a" / "report.json").read_bytes() == (workdir / "b" / "report.json").read_bytes()


def test_same_seed_byte_identical_report(workdir, tmp_path):
    for name in ("x", "y"):
        out = tmp_path / name
        assert main(["--output-dir", str(out), "--seed", "3", "train", "--data", str(workdir / "data")] + TINY) == 0
        assert main(["--output-dir", str(out), "eval", "--data", str(workdir / "data"),
                     "--checkpoint", str(out / "model.npz")]) == 0
    assert (tmp_path / "x" / "report.json").read_bytes() == (tmp_path / "y" / "report.json").read_bytes()


def test_predict(workdir, tmp_path):
    assert main(["--output-dir", str(tmp_path), "predict", "--data", str(workdir / "data"),
                 "--checkpoint", str(workdir / "run" / "model.npz"), "--max-per-video", "2"]) == 0
    lines = (tmp_path / "predictions.jsonl").read_text().splitlines()
    assert len(lines) == 8
    assert set(json.loads(lines[0])) == {"video_id", "class_id", "start_sec", "end_sec", "score"}


def test_ablate_grid(workdir, tmp_path, capsys):
    assert main(["--output-dir", str(tmp_path), "ablate", "--data", str(workdir / "data"),
                 "--grid", "loss_kind=l1,iou", "--grid", "pyramid_style=vitdet,none"] + TINY) == 0
    rows = (tmp_path / "ablation.csv").read_text().splitlines()
    assert rows[0] == "loss_kind,pyramid_style,mAP@0.5,mAP@0.7"
    assert len(rows) == 5
    assert [tuple(r.split(",")[:2]) for r in rows[1:]] == [("l1", "vitdet"), ("l1", "none"),
                                                          ("iou", "vitdet"), ("iou", "none")]


def test_pretrain(workdir, tmp_path):
    assert main(["--output-dir", str(tmp_path), "pretrain", "--data", str(workdir / "data"),
                 "--set", "steps=2", "--set", "model.N=16", "--set", "model.L=1"]) == 0
    assert (tmp_path / "pretrained.npz").exists()


def test_output_root_from_environment(workdir, tmp_path, monkeypatch):
    monkeypatch.setenv("VIDLOC_OUTPUT_ROOT", str(tmp_path / "envroot"))
    assert main(["gen-data", "--n-videos", "2", "--name", "d"]) == 0
    assert (tmp_path / "envroot" / "d" / "annotations.json").exists()


@pytest.mark.parametrize("argv", [
    ["bogus"],
    [],
    ["train"],
    ["train", "--data", "/nonexistent"],
    ["train", "--data", "{data}", "--set", "nope=1"],
    ["train", "--data", "{data}", "--set", "model.text_mode=sideways"],
    ["train", "--data", "{data}", "--set", "noequals"],
    ["eval", "--data", "{data}", "--checkpoint", "/nonexistent.npz"],
    ["ablate", "--data", "{data}", "--grid", "lr=0.1,0.2"],
    ["gen-data", "--n-classes", "40"],
])
def test_user_errors_exit_one(workdir, argv, capsys):
    argv = [a.replace("{data}", str(workdir / "data")) for a in argv]
    assert main(["--output-dir", str(workdir / "err")] + argv) == 1
    err = capsys.readouterr().err
    assert err.startswith("vidloc:") and "Traceback" not in err


def test_bad_config_file(workdir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{broken")
    assert main(["--output-dir", str(tmp_path), "train", "--data", str(workdir / "data"),
                 "--config", str(cfg)]) == 1


def test_internal_error_exit_two(monkeypatch, tmp_path, capsys):
    import vidloc.cli as cli

    def boom(spec):
        raise RuntimeError("unexpected")
    monkeypatch.setattr(cli, "generate_synthetic", boom)
    assert cli.main(["--output-dir", str(tmp_path), "gen-data"]) == 2
    assert "internal error" in capsys.readouterr().err


def test_overrides_and_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lr": 0.3, "model": {"L": 2}}))
    tc = load_train_config(cfg, ["lr=0.2", "model.pyramid_style=none", "freeze.text_encoder=frozen"], seed=5)
    assert tc.lr == 0.2 and tc.model.L == 1 and tc.freeze.text_encoder == "frozen" and tc.seed == 5
    assert apply_overrides({}, ["prompts=[\"{label}\"]"])["prompts"] == ["{label}"]
    with pytest.raises(ConfigError):
        apply_overrides({}, ["model.bogus=1"])
    assert parse_grid(["M=0,3"]) == {"M": [0, 3]}
