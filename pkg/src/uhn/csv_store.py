"""CSV storage for training metrics and experiment summaries."""

import csv
from pathlib import Path
from typing import Optional

from .config import METRICS_COLUMNS, OUTPUT_DIR, SUMMARY_COLUMNS


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsLog:
    """Append-only per-step metrics CSV."""

    def __init__(self, csv_path: Optional[Path] = None, log_wall_time: bool = False):
        self.csv_path = csv_path or OUTPUT_DIR / "metrics.csv"
        self.log_wall_time = log_wall_time
        self._ensure_output_dir()

    def _ensure_output_dir(self) -> None:
        """Create output directory if it doesn't exist."""
        self.csv_path.parent.mkdir(parents=True, exist_ok=True)

    def append(
        self,
        step: int,
        phase: str,
        level: int,
        task: str,
        loss: float,
        lr: float,
        grad_norm: float,
        wall_time: Optional[float] = None,
    ) -> None:
        """Append one row, writing the header first if the file is new.

        ``wall_time`` is only written when the log was opened with ``log_wall_time``.
        """
        new_file = not self.csv_path.exists()
        row = {
            "step": step,
            "phase": phase,
            "level": level,
            "task": task,
            "loss": float(loss),
            "lr": float(lr),
            "grad_norm": float(grad_norm),
            "wall_time": float(wall_time) if self.log_wall_time and wall_time is not None else None,
        }
        with open(self.csv_path, "a", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
            if new_file:
                writer.writeheader()
            writer.writerow({k: _format(v) for k, v in row.items()})

    def read_all(self) -> list[dict]:
        """Read all rows as strings in file order."""
        if not self.csv_path.exists():
            return []
        with open(self.csv_path, "r", newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))

    def losses(self, phase: Optional[str] = None) -> list[float]:
        return [float(r["loss"]) for r in self.read_all() if phase is None or r["phase"] == phase]

    def clear(self) -> None:
        """Remove CSV file."""
        if self.csv_path.exists():
            self.csv_path.unlink()


class SummaryTable:
    """Evaluation results of one experiment in the stable summary schema."""

    def __init__(self, csv_path: Optional[Path] = None):
        self.csv_path = csv_path or OUTPUT_DIR / "summary.csv"
        self.rows: list[dict] = []

    def add(
        self,
        experiment: str,
        kind: str,
        task: str,
        model: str,
        split: str,
        metric: str,
        value: float,
        num_params: int = 0,
        generator_params: int = 0,
        seed: int = 0,
    ) -> None:
        self.rows.append(
            {
                "experiment": experiment,
                "kind": kind,
                "task": task,
                "model": model,
                "split": split,
                "metric": metric,
                "value": float(value),
                "num_params": num_params,
                "generator_params": generator_params,
                "seed": seed,
            }
        )

    def write(self) -> None:
        """Write all rows in schema order."""
        self.csv_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _format(v) for k, v in row.items()})

    @classmethod
    def read(cls, csv_path: Path) -> "SummaryTable":
        table = cls(csv_path)
        with open(csv_path, "r", newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                row["value"] = float(row["value"])
                row["num_params"] = int(row["num_params"] or 0)
                row["generator_params"] = int(row["generator_params"] or 0)
                row["seed"] = int(row["seed"] or 0)
                table.rows.append(row)
        return table

    def select(self, **criteria) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in criteria.items())]

    def get_stats(self) -> dict:
        """Row counts per split."""
        stats: dict = {}
        for row in self.rows:
            stats[row["split"]] = stats.get(row["split"], 0) + 1
        return stats
