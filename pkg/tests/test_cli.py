import json
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml

from lapsegen.cli import main
from lapsegen.config import RunConfig, toy_config
from lapsegen.errors import ConfigError
from lapsegen.model import create_bundle, save_checkpoint


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory, image_dir_module, video_dir_module):
    """A trained-for-a-few-steps checkpoint plus data dirs."""
    root = tmp_path_factory.mktemp("cli")
    cfg = toy_config(final_resolution=16)
    cfg.generator.channel_widths = (16, 16, 8)
    cfg.generator.mapping_depth = 3
    cfg.schedule.transition_samples = 32
    cfg.schedule.stabilization_samples = 32
    cfg.schedule.batch_table = {4: 4, 8: 4, 16: 4}
    cfg.total_steps = 8
    cfg_path = root / "config.yaml"
    cfg.save(cfg_path)
    rc = main(["train", "--images", str(image_dir_module),
               "--videos", str(video_dir_module),
               "--out", str(root / "run"), "--config", str(cfg_path)])
    assert rc == 0
    return root, cfg_path


@pytest.fixture(scope="module")
def image_dir_module(image_dir):
    return image_dir


@pytest.fixture(scope="module")
def video_dir_module(video_dir):
    return video_dir


def test_train_writes_artifacts(cli_workspace):
    root, _ = cli_workspace
    run = root / "run"
    assert (run / "checkpoint.pt").exists()
    assert (run / "metrics.jsonl").exists()
    assert (run / "config.yaml").exists()
    assert (run / "dataset_index.json").exists()
    assert (run / "training_curves.png").exists()
    records = [json.loads(l) for l in (run / "metrics.jsonl").read_text().splitlines()]
    assert len(records) == 8
    assert {"step", "proportion", "d_loss", "g_loss", "resolution"} <= set(records[0])


def test_train_resume(cli_workspace, image_dir_module, video_dir_module):
    root, cfg_path = cli_workspace
    rc = main(["train", "--images", str(image_dir_module),
               "--videos", str(video_dir_module),
               "--out", str(root / "run2"), "--config", str(cfg_path),
               "--steps", "3", "--resume", str(root / "run" / "checkpoint.pt")])
    assert rc == 0
    records = [json.loads(l) for l in
               (root / "run2" / "metrics.jsonl").read_text().splitlines()]
    assert records[0]["step"] == 9  # continued from the earlier counter


def test_sample_video_deterministic_per_seed(cli_workspace):
    root, _ = cli_workspace
    ckpt = root / "run" / "checkpoint.pt"
    for name in ("vid_a", "vid_b"):
        rc = main(["sample-video", "--checkpoint", str(ckpt), "--seed", "7",
                   "--out", str(root / name), "--steps", "3", "--clock", "3h"])
        assert rc == 0
    a_frames = sorted((root / "vid_a").glob("frame_*.png"))
    b_frames = sorted((root / "vid_b").glob("frame_*.png"))
    assert len(a_frames) == 3
    for fa, fb in zip(a_frames, b_frames):
        assert fa.read_bytes() == fb.read_bytes()  # bit-identical files
    rc = main(["sample-video", "--checkpoint", str(ckpt), "--seed", "8",
               "--out", str(root / "vid_c"), "--steps", "3"])
    assert rc == 0
    c0 = (root / "vid_c" / "frame_00000.png").read_bytes()
    assert c0 != a_frames[0].read_bytes()


def test_invert_requires_mask_for_segmented_variant(cli_workspace, capsys):
    root, _ = cli_workspace
    ckpt = root / "run" / "checkpoint.pt"
    rc = main(["invert", "--checkpoint", str(ckpt), "--image", "x.png",
               "--variant", "eoifs", "--out", str(root / "inv")])
    assert rc == 1
    assert "--mask" in capsys.readouterr().err


@pytest.fixture(scope="module")
def inverted(cli_workspace, image_dir_module):
    root, cfg_path = cli_workspace
    ckpt = root / "run" / "checkpoint.pt"
    enc_path = root / "encoder.pt"
    rc = main(["encoder-train", "--checkpoint", str(ckpt), "--out", str(enc_path),
               "--samples", "64", "--config", str(cfg_path)])
    assert rc == 0 and enc_path.exists()

    image = sorted(Path(image_dir_module).glob("*.png"))[0]
    # small iteration budget via a config override
    cfg = RunConfig.load(cfg_path)
    cfg.inversion.max_iters = 4
    cfg.inversion.finetune_iters = 2
    fast_cfg = root / "fast_inversion.yaml"
    cfg.save(fast_cfg)
    out = root / "inv"
    rc = main(["invert", "--checkpoint", str(ckpt), "--image", str(image),
               "--variant", "eoif", "--encoder", str(enc_path),
               "--out", str(out), "--config", str(fast_cfg)])
    assert rc == 0
    return out


def test_invert_writes_artifacts(inverted):
    assert (inverted / "latents.pt").exists()
    assert (inverted / "reconstruction.png").exists()
    trace = [json.loads(l)
             for l in (inverted / "loss_trace.jsonl").read_text().splitlines()]
    assert len(trace) == 4


def test_animate_and_relight_from_latents(cli_workspace, inverted):
    root, _ = cli_workspace
    ckpt = root / "run" / "checkpoint.pt"
    latents = inverted / "latents.pt"
    rc = main(["animate", "--checkpoint", str(ckpt), "--latents", str(latents),
               "--out", str(root / "anim"), "--steps", "2", "--clock", "9h"])
    assert rc == 0
    assert len(list((root / "anim").glob("frame_*.png"))) == 2

    shifter_path = root / "shifter.pt"
    rc = main(["style-shifter-train", "--checkpoint", str(ckpt),
               "--out", str(shifter_path), "--samples", "2048"])
    assert rc == 0
    rc = main(["relight", "--checkpoint", str(ckpt), "--latents", str(latents),
               "--shifter", str(shifter_path), "--style", "night",
               "--frames", "2", "--out", str(root / "relit")])
    assert rc == 0
    assert len(list((root / "relit").glob("frame_*.png"))) == 2


def test_superres_command(cli_workspace, image_dir_module):
    root, _ = cli_workspace
    frames_dir = root / "vid_a"
    hires = sorted(Path(image_dir_module).glob("*.png"))[0]
    rc = main(["superres", "--frames", str(frames_dir),
               "--input-hires", str(hires), "--out", str(root / "sr")])
    assert rc == 0
    outs = list((root / "sr").glob("frame_*.png"))
    assert len(outs) == 3
    from PIL import Image
    with Image.open(outs[0]) as im:
        assert im.size == (64, 64)  # 16px frames upscaled x4


def test_evaluate_command_writes_report(cli_workspace):
    root, _ = cli_workspace
    rc = main(["evaluate", "--real", str(root / "vid_a"),
               "--generated", str(root / "vid_b"),
               "--report", str(root / "eval")])
    assert rc == 0
    assert (root / "eval" / "report.json").exists()
    assert (root / "eval" / "curves.csv").exists()
    assert (root / "eval" / "curves.png").exists()
    doc = json.loads((root / "eval" / "report.json").read_text())
    assert doc["n_frames"] == 3


def test_unknown_config_key_rejected(tmp_path):
    cfg = toy_config()
    data = cfg.to_dict()
    data["bogus_key"] = 1
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(data))
    with pytest.raises(ConfigError):
        RunConfig.load(path)


def test_newer_config_version_rejected(tmp_path):
    data = toy_config().to_dict()
    data["version"] = 99
    path = tmp_path / "future.yaml"
    path.write_text(yaml.safe_dump(data))
    with pytest.raises(ConfigError):
        RunConfig.load(path)


def test_config_round_trip(tmp_path):
    cfg = toy_config(seed=5)
    path = tmp_path / "cfg.yaml"
    cfg.save(path)
    loaded = RunConfig.load(path)
    assert loaded.to_dict() == cfg.to_dict()


def test_missing_data_dir_is_structured_error(tmp_path):
    rc = main(["train", "--images", str(tmp_path / "none"),
               "--videos", str(tmp_path / "none"),
               "--out", str(tmp_path / "out")])
    assert rc == 1
