"""CSV readers and deterministic SVG plots for result bundles."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {
    "svg.hashsalt": "snnfuse",  # fixed ids so identical data gives identical bytes
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "figure.figsize": (6.0, 4.0),
}


class ReportError(ValueError):
    pass


def read_csv(path, required: tuple[str, ...] = ()) -> list[dict[str, str]]:
    """Rows of a headed CSV; raises ReportError when empty or malformed."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ReportError(f"{path}: cannot read ({e.strerror})") from None
    rows = list(csv.reader(text.splitlines()))
    if not rows or not rows[0]:
        raise ReportError(f"{path}: empty CSV")
    header = rows[0]
    missing = [c for c in required if c not in header]
    if missing:
        raise ReportError(f"{path}: missing columns {', '.join(missing)}")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise ReportError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        out.append(dict(zip(header, row)))
    if not out:
        raise ReportError(f"{path}: no data rows")
    return out


def column(rows, name: str, kind=float) -> list:
    try:
        return [kind(r[name]) for r in rows]
    except ValueError as e:
        raise ReportError(f"column {name}: {e}") from None


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_accuracy(epochs: list[int], series: dict[str, list[float]], path, title: str = "") -> None:
    """Accuracy-vs-epoch curves; axes span the observed data."""
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots()
        for label, ys in series.items():
            ax.plot(epochs, ys, marker="o", markersize=3, label=label)
        ax.set_xlim(min(epochs), max(epochs) if max(epochs) > min(epochs) else min(epochs) + 1)
        lo = min(min(ys) for ys in series.values())
        hi = max(max(ys) for ys in series.values())
        pad = max(1.0, 0.05 * (hi - lo))
        ax.set_ylim(lo - pad, hi + pad)
        ax.set_xlabel("epoch")
        ax.set_ylabel("accuracy (%)")
        if title:
            ax.set_title(title)
        ax.grid(alpha=0.3)
        ax.legend()
        fig.tight_layout()
        _save(fig, path)


def plot_bars(labels: list[str], values: list[float], path, ylabel: str = "test accuracy (%)", title: str = "") -> None:
    with matplotlib.rc_context(_RC):
        fig, ax = plt.subplots()
        xs = range(len(labels))
        ax.bar(xs, values, color="#4c72b0")
        ax.set_xticks(list(xs), labels, rotation=30 if len(labels) > 4 else 0, ha="right" if len(labels) > 4 else "center")
        for x, v in zip(xs, values):
            ax.annotate(f"{v:.1f}", (x, v), ha="center", va="bottom", fontsize=8)
        hi = max(values) if values else 1.0
        ax.set_ylim(min(0.0, min(values)), hi * 1.1 if hi > 0 else 1.0)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def mean_by(rows, key: str, value: str) -> dict[str, float]:
    """Mean of ``value`` grouped by ``key``, in first-seen order."""
    groups: dict[str, list[float]] = {}
    for r in rows:
        groups.setdefault(r[key], []).append(float(r[value]))
    return {k: sum(v) / len(v) for k, v in groups.items()}


def render_bundle(bundle: Path, out: Path) -> list[Path]:
    """Plot whatever CSVs a bundle holds; returns the files written."""
    written = []
    found = False
    epochs_path = bundle / "epochs.csv"
    if epochs_path.exists():
        found = True
        rows = read_csv(epochs_path, ("epoch", "train_acc", "test_acc"))
        if "seed" not in rows[0]:
            rows = [dict(r, seed="0") for r in rows]
        epochs = sorted({int(e) for e in column(rows, "epoch", int)})
        series = {}
        for name in ("train_acc", "test_acc"):
            by_epoch = mean_by(rows, "epoch", name)
            series[name.replace("_acc", "")] = [by_epoch[str(e)] for e in epochs]
        p = out / "accuracy.svg"
        plot_accuracy(epochs, series, p, title=bundle.name)
        written.append(p)
    ablation = bundle / "ablation.csv"
    if ablation.exists():
        found = True
        rows = read_csv(ablation, ("group", "variant", "test_acc"))
        for group in ("strategy", "placement"):
            sel = [r for r in rows if r["group"] == group]
            if sel:
                means = mean_by(sel, "variant", "test_acc")
                p = out / f"ablation_{group}.svg"
                plot_bars(list(means), list(means.values()), p, title=f"CMA {group}")
                written.append(p)
    perturb = bundle / "perturb.csv"
    if perturb.exists():
        found = True
        rows = read_csv(perturb, ("condition", "accuracy"))
        means = mean_by(rows, "condition", "accuracy")
        p = out / "perturbation.svg"
        plot_bars(list(means), list(means.values()), p, ylabel="accuracy (%)", title="temporal perturbations")
        written.append(p)
    if not found:
        raise ReportError(f"{bundle}: no epochs.csv, ablation.csv or perturb.csv to plot")
    return written


def final_accuracy(bundle: Path) -> float:
    rows = read_csv(bundle / "epochs.csv", ("epoch", "test_acc"))
    last = max(column(rows, "epoch", int))
    vals = [float(r["test_acc"]) for r in rows if int(r["epoch"]) == last]
    return sum(vals) / len(vals)
