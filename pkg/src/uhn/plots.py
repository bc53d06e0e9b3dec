"""Static plots derived from run CSVs. Needs the ``plots`` extra."""

import logging
from pathlib import Path

from .csv_store import MetricsLog, SummaryTable

log = logging.getLogger(__name__)


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise RuntimeError("Plotting requires matplotlib. Install with: pip install 'uhn[plots]'") from None
    return plt


def plot_metrics(metrics_csv: Path, out_path: Path) -> Path:
    """Loss curves, one line per (phase, level)."""
    plt = _pyplot()
    curves: dict = {}
    for row in MetricsLog(Path(metrics_csv)).read_all():
        key = (row["phase"], row["level"])
        steps, losses = curves.setdefault(key, ([], []))
        steps.append(int(row["step"]))
        losses.append(float(row["loss"]))
    fig, ax = plt.subplots(figsize=(7, 4))
    for (phase, level), (steps, losses) in sorted(curves.items()):
        ax.plot(steps, losses, label=f"{phase} L{level}", linewidth=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if curves:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    log.info("Wrote %s", out_path)
    return Path(out_path)


def plot_summary(summary_csv: Path, out_path: Path) -> Path:
    """Bar chart of summary values labelled by experiment and split."""
    plt = _pyplot()
    rows = SummaryTable.read(Path(summary_csv)).rows
    labels = [f"{r['experiment']}\n{r['task']}:{r['split']}" for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(rows)), 4))
    ax.bar(range(len(rows)), [r["value"] for r in rows])
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel(rows[0]["metric"] if rows else "value")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    log.info("Wrote %s", out_path)
    return Path(out_path)


def plot_run(directory: Path) -> list[Path]:
    directory = Path(directory)
    written = []
    if (directory / "metrics.csv").exists():
        written.append(plot_metrics(directory / "metrics.csv", directory / "metrics.png"))
    if (directory / "summary.csv").exists():
        written.append(plot_summary(directory / "summary.csv", directory / "summary.png"))
    return written
