"""Command-line workflow: train, sample, invert, animate, relight,
super-resolve and evaluate, with checkpoints and a global seed.

Every subcommand exits 0 on success and 1 with a structured message on a
package error; argparse usage problems exit 2 as usual.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import config as config_mod
from .config import InversionConfig, RunConfig, SuperResConfig
from .errors import LapsegenError

log = logging.getLogger("lapsegen")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lapsegen",
        description="style-based timelapse landscape generator toolkit")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="adversarial training from images + videos")
    p.add_argument("--images", required=True, help="directory of scenery images")
    p.add_argument("--videos", required=True, help="directory of frame folders")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="run-config YAML (defaults to the toy preset)")
    p.add_argument("--preset", choices=["toy", "paper"], default="toy")
    p.add_argument("--steps", type=int, help="override total training steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample-video", help="sample a new clip from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--script", help="animation script YAML")
    p.add_argument("--clock", default="3h", help="clock-position motion preset")
    p.add_argument("--steps", type=int, default=16)
    p.add_argument("--fps", type=int, default=30)
    p.add_argument("--speed", type=float, default=1.0)
    p.set_defaults(func=cmd_sample_video)

    p = sub.add_parser("invert", help="recover latents for a real image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--variant", default="eoif",
                   choices=list(config_mod.INVERSION_VARIANTS))
    p.add_argument("--encoder", help="trained encoder archive")
    p.add_argument("--mask", help="static-region mask image")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("animate", help="render a video from inverted latents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--script", help="animation script YAML")
    p.add_argument("--clock", default="3h")
    p.add_argument("--steps", type=int, default=16)
    p.add_argument("--fps", type=int, default=30)
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("relight", help="animate with a lighting ramp")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--shifter", required=True, help="trained style-shifter archive")
    p.add_argument("--style", required=True, help="vocabulary entry name")
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--fps", type=int, default=30)
    p.add_argument("--clock", default="3h")
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--vocab", help="vocabulary JSON (defaults to the built-in)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("superres", help="x4 upscale frames and blend with the input")
    p.add_argument("--frames", required=True, help="directory of rendered frames")
    p.add_argument("--input-hires", required=True, help="original high-res image")
    p.add_argument("--mask", help="static mask at any size (bright = static)")
    p.add_argument("--model", help="trained SR weights (.pt)")
    p.add_argument("--backend", choices=["bilinear", "cnn"], default="bilinear")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_superres)

    p = sub.add_parser("evaluate", help="compare generated frames to a real clip")
    p.add_argument("--real", required=True, help="directory of real frames")
    p.add_argument("--generated", required=True)
    p.add_argument("--mask-dir", help="static mask image (file or directory)")
    p.add_argument("--report", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("encoder-train", help="train the style encoder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_encoder_train)

    p = sub.add_parser("style-shifter-train", help="train the lighting shifter")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_shifter_train)

    return parser


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return RunConfig.load(args.config)
    preset = getattr(args, "preset", "toy")
    cfg = config_mod.toy_config() if preset == "toy" else config_mod.paper_config()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _load_frames_dir(directory: Path) -> list:
    from .data import load_image

    files = sorted(p for p in Path(directory).iterdir()
                   if p.suffix.lower() == ".png")
    if not files:
        raise LapsegenError(f"no frames found in {directory}")
    return [load_image(p).permute(1, 2, 0) for p in files]


# --- subcommands ------------------------------------------------------------------


def cmd_train(args) -> int:
    from .data import ingest_images, ingest_videos
    from .model import create_bundle, load_checkpoint, save_checkpoint
    from .report import render_training_figures
    from .training import Trainer

    cfg = _load_run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.yaml")
    steps = args.steps if args.steps is not None else cfg.total_steps

    res = cfg.generator.final_resolution
    images = ingest_images(args.images, res)
    videos = ingest_videos(args.videos, 2 * res)  # 2x so crop pairs exist
    (out / "dataset_index.json").write_text(json.dumps(
        {"images": len(images), "videos": videos.index()}, indent=2) + "\n")

    if args.resume:
        bundle = load_checkpoint(args.resume)
        log.info("resumed from %s at step %d", args.resume,
                 bundle.progress["steps"])
    else:
        bundle = create_bundle(cfg.generator, seed=cfg.seed)
    trainer = Trainer(bundle, cfg.schedule, images, videos, seed=cfg.seed)
    log_path = out / "metrics.jsonl"
    ckpt_path = out / "checkpoint.pt"
    records = trainer.run(steps, log_path=log_path, checkpoint_path=ckpt_path)
    save_checkpoint(bundle, ckpt_path)
    render_training_figures(log_path, out)
    log.info("trained %d steps; final losses d=%.4f g=%.4f", len(records),
             records[-1].d_loss, records[-1].g_loss)
    return 0


def _script_from_args(args, horizon: float = 0.5):
    from .animation import AnimationScript, load_script
    from .homography import clock_homography

    if getattr(args, "script", None):
        return load_script(args.script)
    hour = int(str(args.clock).rstrip("h"))
    return AnimationScript(
        homography=clock_homography(hour, speed_scale=args.speed,
                                    horizon_y=horizon),
        steps=args.steps if hasattr(args, "steps") else args.frames,
        fps=args.fps,
        noise_stream_seed=args.seed,
    )


def cmd_sample_video(args) -> int:
    from .animation import render_video, save_frames
    from .latents import sample_latents
    from .model import load_checkpoint

    bundle = load_checkpoint(args.checkpoint)
    torch.manual_seed(args.seed)
    rng = torch.Generator().manual_seed(args.seed)
    code, noise = sample_latents(rng, bundle.config)
    script = _script_from_args(args)
    if script.z_dynamic_start is None:
        script.z_dynamic_start = code.z_dynamic
        script.z_dynamic_end = torch.randn(bundle.config.dynamic_dim,
                                           generator=rng)
    frames = render_video(bundle, (code, noise), script)
    save_frames(frames, args.out, fps=script.fps)
    log.info("wrote %d frames to %s", len(frames), args.out)
    return 0


def cmd_invert(args) -> int:
    from .data import load_image, save_image
    from .inversion import (VARIANT_TABLE, invert_image, load_mask,
                            save_latents)
    from .model import load_checkpoint

    spec = VARIANT_TABLE[args.variant]
    if spec.segmentation and not args.mask:
        print("error: variant 'eoifs' requires --mask (static-region "
              "segmentation image)", file=sys.stderr)
        return 1

    bundle = load_checkpoint(args.checkpoint)
    res = bundle.config.final_resolution
    from .data import preprocess
    image = preprocess(load_image(args.image), res)

    inv_cfg = InversionConfig(variant=args.variant)
    if args.config:
        inv_cfg = RunConfig.load(args.config).inversion
        inv_cfg.variant = args.variant

    encoder = None
    if spec.init_w == "encoder":
        if not args.encoder:
            print("error: this variant requires --encoder (train one with "
                  "'lapsegen encoder-train')", file=sys.stderr)
            return 1
        encoder = _load_encoder(args.encoder, bundle)

    mask = load_mask(args.mask, res) if args.mask else None
    result = invert_image(bundle, image.permute(1, 2, 0), inv_cfg,
                          encoder=encoder, mask=mask,
                          rng=torch.Generator().manual_seed(args.seed))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_latents(result, bundle.config, out / "latents.pt")
    save_image(result.reconstruction, out / "reconstruction.png")
    with open(out / "loss_trace.jsonl", "w") as fh:
        for i, value in enumerate(result.diagnostics.get("loss_trace", [])):
            fh.write(json.dumps({"iteration": i, "loss": value}) + "\n")
    log.info("inverted %s with %s: %d iterations", args.image, args.variant,
             result.diagnostics.get("iterations", 0))
    return 0


def _load_encoder(path: str, bundle):
    from .config import EncoderConfig
    from .inversion import StyleEncoder

    payload = torch.load(path, map_location="cpu", weights_only=False)
    enc_cfg = EncoderConfig.from_dict(payload["encoder_config"])
    encoder = StyleEncoder(bundle.config, enc_cfg)
    encoder.load_state_dict(payload["state_dict"])
    encoder.eval()
    return encoder


def cmd_animate(args) -> int:
    from .animation import render_video, save_frames
    from .inversion import load_latents
    from .model import load_checkpoint

    bundle = load_checkpoint(args.checkpoint)
    styles, noise, finetuned = load_latents(args.latents)
    if finetuned is not None:
        bundle.ema_generator.load_state_dict(finetuned)
    script = _script_from_args(args)
    frames = render_video(bundle, (styles, noise), script)
    save_frames(frames, args.out, fps=script.fps)
    log.info("wrote %d frames to %s", len(frames), args.out)
    return 0


def cmd_relight(args) -> int:
    from .animation import save_frames
    from .inversion import load_latents
    from .model import load_checkpoint
    from .relight import StyleShifter, load_style_vocabulary, relight_video

    bundle = load_checkpoint(args.checkpoint)
    styles, noise, finetuned = load_latents(args.latents)
    if finetuned is not None:
        bundle.ema_generator.load_state_dict(finetuned)
    payload = torch.load(args.shifter, map_location="cpu", weights_only=False)
    shifter = StyleShifter(bundle.config.latent_dim, bundle.config.dynamic_dim,
                           tuple(payload["hidden"]))
    shifter.load_state_dict(payload["state_dict"])
    shifter.eval()
    vocab = load_style_vocabulary(args.vocab) if args.vocab else None

    args.steps = args.frames
    script = _script_from_args(args)
    frames = relight_video(bundle, shifter, styles, noise, args.style, script,
                           vocabulary=vocab)
    save_frames(frames, args.out, fps=args.fps)
    log.info("wrote %d relit frames to %s", len(frames), args.out)
    return 0


def cmd_superres(args) -> int:
    from .data import load_image, save_image
    from .inversion import horizon_split_mask
    from .superres import (BlendSpec, blend_frame, make_sr_model,
                           scaled_feather, super_resolve)

    frames = _load_frames_dir(Path(args.frames))
    hires = load_image(args.input_hires).permute(1, 2, 0)
    sr_cfg = SuperResConfig(backend=args.backend)
    model = make_sr_model(sr_cfg)
    if args.model:
        payload = torch.load(args.model, map_location="cpu", weights_only=False)
        model.load_state_dict(payload["state_dict"])
    model.eval()

    sr_frames = [super_resolve(model, f) for f in frames]
    hi_side = sr_frames[0].shape[0]
    if hires.shape[0] != hi_side:
        import torch.nn.functional as F
        hires = F.interpolate(hires.permute(2, 0, 1).unsqueeze(0),
                              size=(hi_side, hi_side), mode="bilinear",
                              align_corners=False)[0].permute(1, 2, 0)
    if args.mask:
        from .inversion import load_mask
        mask = load_mask(args.mask, hi_side)
    else:
        mask = horizon_split_mask(hi_side)
    spec = BlendSpec(hires, sr_frames, mask,
                     radius=sr_cfg.guided_radius, eps=sr_cfg.guided_eps,
                     feather_px=scaled_feather(sr_cfg.feather_px, hi_side))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(sr_frames)):
        save_image(blend_frame(spec, i), out / f"frame_{i:05d}.png")
    log.info("wrote %d super-resolved frames to %s", len(sr_frames), args.out)
    return 0


def cmd_evaluate(args) -> int:
    from .inversion import horizon_split_mask, load_mask
    from .metrics import evaluate_animation
    from .perceptual import RandomPyramidProvider
    from .report import write_eval_report

    real = _load_frames_dir(Path(args.real))
    generated = _load_frames_dir(Path(args.generated))
    res = real[0].shape[0]
    if args.mask_dir:
        mask_path = Path(args.mask_dir)
        if mask_path.is_dir():
            candidates = sorted(mask_path.glob("*.png"))
            if not candidates:
                raise LapsegenError(f"no mask images in {mask_path}")
            mask = load_mask(candidates[0], res)
        else:
            mask = load_mask(mask_path, res)
    else:
        mask = horizon_split_mask(res)

    provider = RandomPyramidProvider(seed=0)
    report = evaluate_animation(real, generated, mask, provider)
    paths = write_eval_report(report, args.report,
                              render_figures=not args.no_figures)
    log.info("report written to %s", paths["report"])
    return 0


def cmd_encoder_train(args) -> int:
    from .inversion import train_encoder
    from .model import load_checkpoint

    bundle = load_checkpoint(args.checkpoint)
    cfg = _load_run_config(args)
    encoder = train_encoder(bundle, cfg.encoder, n_samples=args.samples,
                            seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": encoder.state_dict(),
                "encoder_config": {
                    "stage_blocks": list(cfg.encoder.stage_blocks),
                    "stage_channels": list(cfg.encoder.stage_channels),
                    "stem_channels": cfg.encoder.stem_channels,
                    "mlp_hidden": cfg.encoder.mlp_hidden,
                }}, out)
    log.info("encoder saved to %s", out)
    return 0


def cmd_shifter_train(args) -> int:
    from .model import load_checkpoint
    from .relight import train_style_shifter

    bundle = load_checkpoint(args.checkpoint)
    shifter = train_style_shifter(bundle.mapping,
                                  dynamic_dim=bundle.config.dynamic_dim,
                                  n_samples=args.samples, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    hidden = [m.out_features for m in shifter.net
              if isinstance(m, torch.nn.Linear)][:-1]
    torch.save({"state_dict": shifter.state_dict(), "hidden": hidden}, out)
    log.info("style shifter saved to %s", out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LapsegenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
