"""Delimited result files, plain-text summary tables, and figure rendering."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evalkit import EpisodeMetrics, SweepResult


def write_jsonl(path: str | Path, records: list[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines()
            if line.strip()]


def metrics_table(groups: dict[str, list[EpisodeMetrics]]) -> str:
    """Fixed-width comparison table, one row per labelled group."""
    lines = [f"{'policy':<16}{'ETT (s)':>12}{'ACD (s/veh)':>14}"
             f"{'throughput':>12}{'EV stops':>10}{'arrived':>9}"]
    for name, ms in groups.items():
        ett = np.asarray([m.ett_s for m in ms])
        acd_v = np.asarray([m.acd_s_per_veh for m in ms])
        thr = np.asarray([m.throughput_veh for m in ms])
        stops = np.asarray([m.ev_stops for m in ms])
        arr = np.asarray([m.arrived for m in ms])
        lines.append(
            f"{name:<16}{ett.mean():>7.1f}±{ett.std():<4.1f}"
            f"{np.nanmean(acd_v):>9.1f}±{np.nanstd(acd_v):<4.1f}"
            f"{thr.mean():>12.1f}{stops.mean():>10.2f}{arr.mean():>9.2f}")
    return "\n".join(lines)


def sweep_table(result: SweepResult) -> str:
    axis = result.spec.axis
    lines = [f"{axis:>14}{'n':>6}{'ETT (s)':>12}{'ACD (s/veh)':>14}"
             f"{'throughput':>12}{'return':>12}"]
    for row in result.rows:
        if row.error:
            lines.append(f"{row.axis_value!s:>14}{row.n_episodes:>6}  "
                         f"error: {row.error}")
            continue
        lines.append(
            f"{row.axis_value!s:>14}{row.n_episodes:>6}"
            f"{row.means['ett_s']:>12.1f}{row.means['acd_s_per_veh']:>14.2f}"
            f"{row.means['throughput_veh']:>12.1f}"
            f"{row.means['episode_return']:>12.1f}")
    return "\n".join(lines)


# -- figures --------------------------------------------------------------------


def eval_figure(path: str | Path,
                groups: dict[str, list[EpisodeMetrics]]) -> None:
    """Bar chart of mean ETT and ACD per policy with std whiskers."""
    names = list(groups)
    ett = [np.mean([m.ett_s for m in groups[n]]) for n in names]
    ett_sd = [np.std([m.ett_s for m in groups[n]]) for n in names]
    acd_v = [np.nanmean([m.acd_s_per_veh for m in groups[n]]) for n in names]
    acd_sd = [np.nanstd([m.acd_s_per_veh for m in groups[n]]) for n in names]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].bar(names, ett, yerr=ett_sd, color="#4878d0", capsize=3)
    axes[0].set_ylabel("EV travel time (s)")
    axes[1].bar(names, acd_v, yerr=acd_sd, color="#ee854a", capsize=3)
    axes[1].set_ylabel("avg civilian delay (s/veh)")
    for ax in axes:
        ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sweep_figure(path: str | Path, result: SweepResult) -> None:
    """ETT and ACD against the sweep axis."""
    xs = [row.axis_value for row in result.rows if not row.error]
    ett = [row.means["ett_s"] for row in result.rows if not row.error]
    acd_v = [row.means["acd_s_per_veh"] for row in result.rows if not row.error]
    fig, ax1 = plt.subplots(figsize=(6, 3.6))
    ax1.plot(xs, ett, "o-", color="#4878d0", label="ETT")
    ax1.set_xlabel(result.spec.axis)
    ax1.set_ylabel("EV travel time (s)", color="#4878d0")
    ax2 = ax1.twinx()
    ax2.plot(xs, acd_v, "s--", color="#ee854a", label="ACD")
    ax2.set_ylabel("avg civilian delay (s/veh)", color="#ee854a")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def spacetime_figure(path: str | Path, records: list[dict],
                     link_length_m: float, route_k: int, dt: float) -> None:
    """EV trajectory over time with per-intersection signal bands."""
    ts = [r["t"] * dt for r in records]
    pos = [r["ev_pos_m"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    for j in range(route_k):
        y = j * link_length_m
        for r in records:
            color = "#2ca02c" if r["ev_green"][j] else "#d62728"
            ax.plot([r["t"] * dt, (r["t"] + 1) * dt], [y, y],
                    color=color, linewidth=3, solid_capstyle="butt",
                    alpha=0.8)
    ax.plot(ts, pos, "k-", linewidth=1.8, label="EV position")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("route position (m)")
    ax.set_title("space-time diagram")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def training_figure(path: str | Path, history: list[dict]) -> None:
    epochs = [h["epoch"] for h in history]
    fig, ax1 = plt.subplots(figsize=(6, 3.6))
    ax1.plot(epochs, [h["train_loss"] for h in history], label="train")
    if any(np.isfinite(h.get("val_loss", float("nan"))) for h in history):
        ax1.plot(epochs, [h["val_loss"] for h in history], label="val")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def bench_table(rows: list[dict]) -> str:
    lines = [f"{'grid':>8}{'env steps/s':>14}{'model ms/step':>16}"]
    for r in rows:
        model_ms = r.get("model_ms_per_step")
        model_s = f"{model_ms:>16.2f}" if model_ms is not None else f"{'-':>16}"
        lines.append(f"{r['grid']:>8}{r['env_steps_per_s']:>14.0f}{model_s}")
    return "\n".join(lines)
