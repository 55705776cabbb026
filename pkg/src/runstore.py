"""
runstore.py

Run-directory persistence for training and evaluation.
Handles the resolved config snapshot, the per-iteration metrics CSV,
threshold state, evaluation reports and the run summary.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml

from models.records import RunRecordEntry, metrics_columns
from models.training import TrainConfig

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.yaml"
METRICS_FILE = "metrics.csv"
THRESHOLDS_FILE = "thresholds.json"
TRACE_FILE = "threshold_trace.csv"
SUMMARY_FILE = "summary.json"
DIAGNOSTIC_FILE = "diagnostic.json"
LOG_FILE = "train.log"
BEST_CHECKPOINT = "best.udas"
FINAL_CHECKPOINT = "final.udas"
LATEST_CHECKPOINT = "latest.udas"


class RunStore:
    """
    Owns the files of one run directory.

    Features:
    - Config snapshot used to rebuild the networks at evaluation time
    - Append-only metrics CSV with a stable column order
    - JSON state (thresholds, summary, diagnostics)
    """

    def __init__(self, run_dir, class_names: Sequence[str]):
        """
        Args:
            run_dir: Directory for this run (created if missing)
            class_names: Names used for the per-class threshold columns
        """
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.class_names = list(class_names)
        self.columns = metrics_columns(self.class_names)
        self._metrics_started = False
        logger.info(f"RunStore initialized at: {self.run_dir}")

    def path(self, name: str) -> Path:
        return self.run_dir / name

    # ----------------------------
    # Config
    # ----------------------------
    def save_config(self, cfg: TrainConfig) -> Path:
        path = self.path(CONFIG_FILE)
        with open(path, 'w', encoding='utf-8') as f:
            yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
        return path

    @staticmethod
    def load_config(run_dir) -> TrainConfig:
        path = Path(run_dir) / CONFIG_FILE
        if not path.exists():
            raise FileNotFoundError(f"Run config not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            nested = yaml.safe_load(f) or {}
        flat = {f"{section}.{key}": value
                for section, values in nested.items() for key, value in values.items()}
        return TrainConfig.from_flat(flat)

    # ----------------------------
    # Metrics
    # ----------------------------
    def append_metrics(self, entries: List[RunRecordEntry]) -> int:
        """
        Append rows to metrics.csv, writing the header on first use.

        Returns:
            Number of rows written
        """
        if not entries:
            return 0
        mode = 'a' if self._metrics_started else 'w'
        with open(self.path(METRICS_FILE), mode, newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=self.columns)
            if not self._metrics_started:
                writer.writeheader()
                self._metrics_started = True
            for entry in entries:
                writer.writerow(entry.to_row(self.class_names))
        return len(entries)

    def read_metrics(self) -> List[Dict[str, str]]:
        path = self.path(METRICS_FILE)
        if not path.exists():
            raise FileNotFoundError(f"Metrics file not found: {path}")
        with open(path, 'r', newline='', encoding='utf-8') as f:
            return list(csv.DictReader(f))

    # ----------------------------
    # JSON state
    # ----------------------------
    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.path(name)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2)
        return path

    def read_json(self, name: str) -> Dict[str, Any]:
        path = self.path(name)
        if not path.exists():
            raise FileNotFoundError(f"{name} not found in run directory {self.run_dir}")
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)

    def write_diagnostic(self, iteration: int, terms: Dict[str, float],
                         thresholds: Optional[List[float]] = None) -> Path:
        path = self.write_json(DIAGNOSTIC_FILE, {
            'iteration': iteration,
            'terms': {k: (None if v is None else float(v)) for k, v in terms.items()},
            'non_finite': sorted(k for k, v in terms.items() if v is not None and not _finite(v)),
            'thresholds': thresholds,
        })
        logger.error(f" Diagnostic written: {path}")
        return path

    def print_stats(self):
        """Print a short overview of the run directory."""
        print("\n" + "=" * 70)
        print("RUN DIRECTORY")
        print("=" * 70)
        print(f"Run: {self.run_dir}")
        for item in sorted(self.run_dir.iterdir()):
            if item.is_file():
                print(f"  {item.name:30s}: {item.stat().st_size:>12,} bytes")
        print("=" * 70 + "\n")


def _finite(value: float) -> bool:
    return value == value and value not in (float("inf"), float("-inf"))
