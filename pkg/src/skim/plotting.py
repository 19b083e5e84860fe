"""Figures for quantization reports.  Uses the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "font.size": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_bit_histogram(report: dict, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        hist = report["bit_histogram"]
        bits = sorted(hist, key=int)
        ax.bar([int(b) for b in bits], [hist[b] for b in bits], color="0.4", width=0.6)
        ax.set_xticks([int(b) for b in bits])
        ax.set_xlabel("bits per channel")
        ax.set_ylabel("channels")
        ax.set_title(f"{report['layer']}: average {report['avg_bits']:.3f} bits")
        return _save(fig, path)


def plot_error_histogram(report: dict, path, bins: int = 40):
    """Distribution of per-channel errors at the lowest candidate bit width."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        errs = np.asarray(report["error_matrix"])[:, 0]
        ax.hist(errs, bins=bins, color="0.4")
        ax.set_xlabel(f"channel error at {report['b_min']} bits")
        ax.set_ylabel("channels")
        return _save(fig, path)


def plot_error_scatter(report: dict, path):
    """Error at ``b_min`` bits against error one bit higher, one point per channel."""
    E = np.asarray(report["error_matrix"])
    if E.shape[1] < 2:
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.scatter(E[:, 0], E[:, 1], s=6, color="k", alpha=0.6, linewidths=0)
        ax.set_xlabel(f"error at {report['b_min']} bits")
        ax.set_ylabel(f"error at {report['b_min'] + 1} bits")
        return _save(fig, path)


def plot_loss_trace(report: dict, path):
    trace = report.get("trace") or []
    if not trace:
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        tr = np.asarray(trace, dtype=float)
        for it in np.unique(tr[:, 0]):
            sel = tr[tr[:, 0] == it]
            ax.plot(sel[:, 1], sel[:, 2], lw=1.2, label=f"iteration {int(it) + 1}")
        ax.axhline(report["loss_grouping"], color="0.5", ls="--", lw=0.8, label="alpha = 1")
        ax.set_xlabel("Adam step")
        ax.set_ylabel("L-full loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def render_report(report: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    stem = report["layer"]
    made = [
        plot_bit_histogram(report, out_dir / f"{stem}_bits.png"),
        plot_error_histogram(report, out_dir / f"{stem}_error_hist.png"),
        plot_error_scatter(report, out_dir / f"{stem}_error_scatter.png"),
        plot_loss_trace(report, out_dir / f"{stem}_loss.png"),
    ]
    return [p for p in made if p is not None]
