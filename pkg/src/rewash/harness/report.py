"""Figure rendering for evaluation runs.

Two figures per scheme: detection versus noising budget (one series per
attack) and the removal/quality trade-off with the feature-distance axis
inverted so the upper-left corner reads as better on both axes.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _series_by_attack(rows: list[dict], scheme: str) -> dict[str, list[dict]]:
    series = defaultdict(list)
    for row in rows:
        if row["scheme"] == scheme:
            series[row["attack"]].append(row)
    for name in series:
        series[name].sort(key=lambda r: (r["t_star"] if r["t_star"] != "" else -1))
    return dict(series)


def _detection_value(row: dict) -> float:
    return row["tpr1fpr_after"]


def sweep_plot(rows: list[dict], scheme: str, path: Path) -> None:
    """Detection after attack vs noising step, one series per attack."""
    series = _series_by_attack(rows, scheme)
    grid = sorted({r["t_star"] for rs in series.values() for r in rs if r["t_star"] != ""})
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for name, rs in series.items():
        xs = [r["t_star"] for r in rs if r["t_star"] != ""]
        if xs:
            ys = [_detection_value(r) for r in rs if r["t_star"] != ""]
            accs = [r["bitacc_after"] for r in rs if r["t_star"] != ""]
            marker = "o-" if len(xs) > 1 else "s"
            axes[0].plot(xs, ys, marker, label=name)
            if all(a != "" for a in accs):
                axes[1].plot(xs, accs, marker, label=name)
        else:
            # budget-free attack: a reference level across the grid
            level = _detection_value(rs[0])
            span = grid or [0, 1]
            axes[0].plot(
                [min(span), max(span)], [level, level], "--", label=name
            )
            if rs[0]["bitacc_after"] != "":
                acc = rs[0]["bitacc_after"]
                axes[1].plot([min(span), max(span)], [acc, acc], "--", label=name)
    axes[0].set_xlabel("noising steps")
    axes[0].set_ylabel("TPR@1%FPR after attack")
    axes[0].set_ylim(-0.05, 1.05)
    axes[1].set_xlabel("noising steps")
    axes[1].set_ylabel("bit accuracy after attack")
    axes[1].set_ylim(0.35, 1.05)
    for ax in axes:
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=7)
        ax.grid(alpha=0.3)
    fig.suptitle(f"{scheme}: detection vs noising budget")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def tradeoff_plot(rows: list[dict], scheme: str, path: Path) -> None:
    """Removal/quality trade-off; the feature-distance axis is inverted."""
    series = _series_by_attack(rows, scheme)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for name, rs in series.items():
        det = [_detection_value(r) for r in rs]
        ffid = [r["ffid"] for r in rs]
        ps = [r["psnr"] for r in rs]
        style = "o-" if len(rs) > 1 else "s"
        axes[0].plot(det, ffid, style, label=name)
        axes[1].plot(det, ps, style, label=name)
    axes[0].set_ylabel("feature distance (lower is better)")
    axes[0].invert_yaxis()
    axes[1].set_ylabel("PSNR (dB)")
    for ax in axes:
        ax.set_xlabel("TPR@1%FPR after attack")
        ax.legend(fontsize=7)
        ax.grid(alpha=0.3)
    fig.suptitle(f"{scheme}: removal vs quality (top-left is better)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_reports(rows: list[dict], plot_dir: str | Path) -> list[str]:
    """Render every per-scheme figure; returns the written paths."""
    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for scheme in sorted({r["scheme"] for r in rows}):
        sweep_path = plot_dir / f"sweep_{scheme}.png"
        sweep_plot(rows, scheme, sweep_path)
        written.append(str(sweep_path))
        trade_path = plot_dir / f"tradeoff_{scheme}.png"
        tradeoff_plot(rows, scheme, trade_path)
        written.append(str(trade_path))
    return written
