"""Report emission: versioned JSON document, delimited curve tables and
rendered matplotlib figures, written side by side in the output directory.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import EvalReport


def write_eval_report(report: EvalReport, out_dir: str | Path,
                      render_figures: bool = True) -> dict[str, Path]:
    """report.json + curves.csv (+ curves.png / motion.png)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    json_path = out / "report.json"
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    paths["report"] = json_path

    csv_path = out / "curves.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "ssim_vs_first", "lpips_vs_first",
                         "ssim_aligned", "lpips_aligned"])
        for n in range(report.n_frames):
            writer.writerow([
                n,
                _maybe(report.ssim_first_frame, n),
                _maybe(report.lpips_first_frame, n),
                _maybe(report.ssim_aligned, n),
                _maybe(report.lpips_aligned, n),
            ])
    paths["curves"] = csv_path

    if render_figures:
        paths["figure"] = render_curve_figure(report, out / "curves.png")
    return paths


def _maybe(values: list, idx: int):
    return values[idx] if idx < len(values) else ""


def render_curve_figure(report: EvalReport, path: Path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    frames = range(report.n_frames)
    axes[0].plot(frames, report.ssim_first_frame, label="vs first frame")
    if report.ssim_aligned:
        axes[0].plot(range(len(report.ssim_aligned)), report.ssim_aligned,
                     label="aligned", linestyle="--")
    axes[0].set_xlabel("frame")
    axes[0].set_ylabel("masked SSIM")
    axes[0].legend()
    axes[1].plot(frames, report.lpips_first_frame, label="vs first frame")
    if report.lpips_aligned:
        axes[1].plot(range(len(report.lpips_aligned)), report.lpips_aligned,
                     label="aligned", linestyle="--")
    axes[1].set_xlabel("frame")
    axes[1].set_ylabel("perceptual distance")
    axes[1].legend()
    fig.suptitle(f"static consistency (FID {report.fid:.2f}, "
                 f"motion {report.motion:.3g})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_training_figures(log_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Loss curves and the pairwise-proportion trace from the step log."""
    records = []
    with open(log_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = [r["step"] for r in records]

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(steps, [r["d_loss"] for r in records], label="discriminator",
                 alpha=0.8)
    axes[0].plot(steps, [r["g_loss"] for r in records], label="generator",
                 alpha=0.8)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("loss")
    axes[0].legend()
    axes[1].plot(steps, [r["proportion"] for r in records])
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("pairwise proportion")
    axes[1].set_ylim(0, 0.6)
    fig.tight_layout()
    losses_path = out / "training_curves.png"
    fig.savefig(losses_path, dpi=120)
    plt.close(fig)
    return [losses_path]


def write_generation_reports(reports: dict, out_dir: str | Path,
                             render_figures: bool = True) -> dict[str, Path]:
    """Ablation table: JSON + CSV + bar figure across bundle variants."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    doc = {name: vars(rep) for name, rep in reports.items()}
    json_path = out / "generation_report.json"
    json_path.write_text(json.dumps(doc, indent=2) + "\n")
    paths["report"] = json_path

    csv_path = out / "generation_report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "fid", "pair_ssim", "pair_lpips",
                         "n_pairs", "n_fid_samples"])
        for name, rep in reports.items():
            writer.writerow([name, rep.fid, rep.pair_ssim, rep.pair_lpips,
                             rep.n_pairs, rep.n_fid_samples])
    paths["table"] = csv_path

    if render_figures and reports:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        names = list(reports)
        ax.bar(names, [reports[n].fid for n in names])
        ax.set_ylabel("FID")
        fig.tight_layout()
        fig_path = out / "generation_fid.png"
        fig.savefig(fig_path, dpi=120)
        plt.close(fig)
        paths["figure"] = fig_path
    return paths
