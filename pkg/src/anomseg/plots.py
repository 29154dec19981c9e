"""Static figures from run artifacts. Each PNG is written next to the CSV holding its plotted data."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .mdat import SmoothingSchedule, tau  # noqa: E402
from .trainer import TrainConfig, poly_lr, read_loss_csv  # noqa: E402

LOSS_KEYS = ("L_total", "L_CE", "L_MDA_f", "L_MDA_o", "L_CAC", "L_D_f", "L_D_o")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def read_plot_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in (rows[0].keys() if rows else [])}


def schedule_curves(cfg: TrainConfig, max_iters: int):
    """Closed-form tau and lr over iterations 0..max_iters inclusive."""
    sched = SmoothingSchedule(cfg.tau_base, max_iters)
    its = list(range(max_iters + 1))
    taus = [tau(i, sched) if cfg.dls else cfg.tau_base for i in its]
    lrs = [poly_lr(i, max_iters, cfg.lr, cfg.poly_power) for i in its]
    return its, taus, lrs


def plot_training(run_dir, out_dir) -> list[Path]:
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    reports = read_loss_csv(run_dir / "losses.csv")
    cfg = TrainConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    max_iters = json.loads((run_dir / "run_info.json").read_text())["max_iters"]
    written = []

    its = [r.iteration for r in reports]
    _write_csv(out_dir / "loss_curves.csv", ["iteration", *LOSS_KEYS],
               [[r.iteration, *(getattr(r, k) for k in LOSS_KEYS)] for r in reports])
    fig, ax = plt.subplots(figsize=(7, 4))
    for k in LOSS_KEYS:
        ax.plot(its, [getattr(r, k) for r in reports], label=k, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(out_dir / "loss_curves.png", dpi=100)
    plt.close(fig)
    written.append(out_dir / "loss_curves.png")

    s_its, taus, lrs = schedule_curves(cfg, max_iters)
    _write_csv(out_dir / "tau_schedule.csv", ["iteration", "tau"], zip(s_its, taus))
    _write_csv(out_dir / "lr_schedule.csv", ["iteration", "lr"], zip(s_its, lrs))
    for name, ys, logged, label in (("tau_schedule", taus, [r.tau for r in reports], "tau"),
                                    ("lr_schedule", lrs, [r.lr for r in reports], "learning rate")):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(s_its, ys, label="closed form")
        ax.plot(its, logged, ".", ms=2, label="logged")
        ax.set_xlabel("iteration")
        ax.set_ylabel(label)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / f"{name}.png", dpi=100)
        plt.close(fig)
        written.append(out_dir / f"{name}.png")
    return written


def plot_pr(run_dir, out_dir) -> Path:
    data = read_plot_csv(Path(run_dir) / "pr_curve.csv")
    _write_csv(Path(out_dir) / "pr_curve_plot.csv", ["recall", "precision"], zip(data["recall"], data["precision"]))
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.step(data["recall"], data["precision"], where="post")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    fig.tight_layout()
    path = Path(out_dir) / "pr_curve.png"
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
