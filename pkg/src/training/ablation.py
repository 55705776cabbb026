"""
ablation.py

The eight-row ablation matrix: supervised only, each generator term
removed in turn, self-training without selection, fixed-threshold
selection and the full framework. Every row runs once per seed.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from adaptation.selftrain import ThresholdState, summarize_thresholds
from models.training import TrainConfig
from runstore import THRESHOLDS_FILE, RunStore
from training.trainer import run_training

logger = logging.getLogger(__name__)

ABLATION_FILE = "ablation.csv"
ACCEPTANCE_FILE = "acceptance.json"

# mIoU fractions, not points
MIN_GAP = 0.03
TIE_TOLERANCE = 0.005
ORDERED_BELOW_FULL = ("no_self_training", "no_threshold", "fixed_0.2")

RARE_OBSERVED_RATE = 0.01
FLAT_FRACTION = 0.9
MIN_CHANGES = 10

ALL_ON = {
    'train.use_g1_s': True,
    'train.use_g1_t': True,
    'train.use_g2': True,
    'train.use_g3': True,
    'selftrain.threshold_mode': 'adaptive',
}

ROWS = [
    ("supervised", {'train.use_g1_s': False, 'train.use_g1_t': False,
                    'train.use_g2': False, 'train.use_g3': False}),
    ("no_g1_s", {'train.use_g1_s': False}),
    ("no_g1_t", {'train.use_g1_t': False}),
    ("no_g2", {'train.use_g2': False}),
    ("no_self_training", {'train.use_g3': False}),
    ("no_threshold", {'selftrain.threshold_mode': 'none'}),
    ("fixed_0.2", {'selftrain.threshold_mode': 'fixed', 'selftrain.fixed_threshold': 0.2}),
    ("full", {}),
]


@dataclass
class AblationRow:
    index: int
    name: str
    overrides: Dict[str, Any]
    config_hash: str
    seeds: List[int] = field(default_factory=list)
    mious: List[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.mious)) if self.mious else float("nan")

    def switches(self) -> str:
        return ";".join(f"{k.split('.', 1)[1]}={v}" for k, v in sorted(self.overrides.items()))

    def to_dict(self):
        return {
            'row': self.index,
            'name': self.name,
            'switches': self.switches(),
            'config_hash': self.config_hash,
            'seeds': list(self.seeds),
            'mious': list(self.mious),
            'mean': self.mean,
        }


def row_config(base: TrainConfig, overrides: Dict[str, Any]) -> TrainConfig:
    """Base config with every term switched on, then the row's switches applied."""
    switches = dict(ALL_ON)
    switches.update(overrides)
    return base.with_overrides(switches)


def ablation_suite(base: TrainConfig, out_dir: Union[str, Path],
                   seeds: Optional[Sequence[int]] = None,
                   show_progress: Optional[bool] = None) -> List[AblationRow]:
    """
    Train every row for every seed and write ablation.csv in row order.

    Returns:
        One AblationRow per configuration, with the final target mIoU per seed
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(seeds if seeds is not None else base.ablation.seeds)

    rows = []
    for index, (name, overrides) in enumerate(ROWS, start=1):
        cfg = row_config(base, overrides).validate()
        row = AblationRow(index, name, dict(overrides), cfg.config_hash())
        logger.info(f"Ablation row {index}/{len(ROWS)}: {name}")
        for seed in seeds:
            run_cfg = cfg.with_overrides({'run.seed': seed, 'run.name': f"{name}_seed{seed}"})
            record = run_training(run_cfg, out_dir / name / f"seed{seed}", show_progress)
            row.seeds.append(seed)
            row.mious.append(record.final_miou)
        logger.info(f"  {name}: mean mIoU {row.mean:.4f} over seeds {seeds}")
        rows.append(row)

    write_ablation_table(rows, out_dir / ABLATION_FILE)
    write_acceptance(acceptance_report(rows, out_dir), out_dir)
    return rows


def write_ablation_table(rows: List[AblationRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    seeds = rows[0].seeds if rows else []
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(["row", "name", "switches", "config_hash"]
                        + [f"miou_seed{s}" for s in seeds] + ["mean"])
        for row in rows:
            writer.writerow([row.index, row.name, row.switches(), row.config_hash]
                            + [repr(m) for m in row.mious] + [repr(row.mean)])
    logger.info(f" Exported ablation table to {path}")
    return path


def paired_gap(rows: List[AblationRow], baseline: str = "supervised", method: str = "full") -> Dict[str, Any]:
    """Per-seed and mean mIoU difference between two rows run on the same seeds."""
    by_name = {r.name: r for r in rows}
    base, best = by_name[baseline], by_name[method]
    gaps = [m - b for m, b in zip(best.mious, base.mious)]
    return {'baseline': baseline, 'method': method, 'seeds': list(best.seeds),
            'gaps': gaps, 'mean_gap': float(np.mean(gaps)) if gaps else float("nan")}


@dataclass
class AcceptanceCheck:
    name: str
    passed: bool
    detail: str

    def to_dict(self):
        return {'name': self.name, 'passed': self.passed, 'detail': self.detail}


def threshold_checks(out_dir: Union[str, Path], row: str = "full") -> List[AcceptanceCheck]:
    """
    Threshold behaviour of every seed of one row, read from its thresholds.json.

    Each run must keep all recorded thresholds in [0, 1], move at least one
    class MIN_CHANGES times, and keep any class observed on fewer than
    RARE_OBSERVED_RATE of the steps flat for FLAT_FRACTION of its deltas.
    """
    checks = []
    for run_dir in sorted(Path(out_dir, row).glob("seed*")):
        if not (run_dir / THRESHOLDS_FILE).exists():
            continue
        state = ThresholdState.from_dict(RunStore(run_dir, []).read_json(THRESHOLDS_FILE))
        summary = summarize_thresholds(state)
        values = [v for history in state.history for _, v in history]
        in_range = all(0.0 <= v <= 1.0 for v in values)
        checks.append(AcceptanceCheck(
            f"{row}/{run_dir.name}: thresholds in [0, 1]", in_range,
            f"{len(values)} recorded values, range [{min(values, default=0.0):.4f}, "
            f"{max(values, default=0.0):.4f}]"))

        most = max(summary, key=lambda s: s['changes'])
        checks.append(AcceptanceCheck(
            f"{row}/{run_dir.name}: a threshold moves", most['changes'] >= MIN_CHANGES,
            f"{most['class_name']} changed {most['changes']} times (need {MIN_CHANGES})"))

        rare = [s for s in summary if s['observed_rate'] < RARE_OBSERVED_RATE]
        flat = [s for s in rare if s['flat_fraction'] >= FLAT_FRACTION]
        checks.append(AcceptanceCheck(
            f"{row}/{run_dir.name}: rare classes stay piecewise constant", len(flat) == len(rare),
            ", ".join(f"{s['class_name']} observed {s['observed_rate'] * 100:.2f}%, "
                      f"flat {s['flat_fraction'] * 100:.1f}%" for s in rare) or "no rare class"))
    return checks


def acceptance_report(rows: List[AblationRow], out_dir: Union[str, Path]) -> List[AcceptanceCheck]:
    """
    Directional checks over a finished ablation: the full row beats the
    supervised row by MIN_GAP on average, matches or beats each selection
    variant within TIE_TOLERANCE, and its thresholds behave. Checks whose
    rows are missing are skipped.
    """
    by_name = {r.name: r for r in rows}
    checks = []
    if {"supervised", "full"} <= by_name.keys():
        gap = paired_gap(rows)
        checks.append(AcceptanceCheck(
            "full beats supervised", gap['mean_gap'] >= MIN_GAP,
            f"mean gap {gap['mean_gap'] * 100:+.2f} points over seeds {gap['seeds']} "
            f"(need {MIN_GAP * 100:+.1f})"))
    if "full" in by_name:
        full = by_name["full"].mean
        for name in ORDERED_BELOW_FULL:
            if name not in by_name:
                continue
            other = by_name[name].mean
            checks.append(AcceptanceCheck(
                f"full >= {name}", full >= other - TIE_TOLERANCE,
                f"{full * 100:.2f} vs {other * 100:.2f} (tie within {TIE_TOLERANCE * 100:.1f})"))
    checks.extend(threshold_checks(out_dir))
    return checks


def write_acceptance(checks: List[AcceptanceCheck], out_dir: Union[str, Path]) -> Path:
    payload = {'passed': all(c.passed for c in checks), 'checks': [c.to_dict() for c in checks]}
    path = RunStore(out_dir, []).write_json(ACCEPTANCE_FILE, payload)
    logger.info(f" Exported acceptance report to {path}")
    return path


def print_ablation(rows: List[AblationRow]):
    print("\n" + "=" * 70)
    print("ABLATION")
    print("=" * 70)
    for row in rows:
        per_seed = "  ".join(f"{m * 100:6.2f}" for m in row.mious)
        print(f"  {row.index}. {row.name:<18} {per_seed}  | mean {row.mean * 100:6.2f}")
    if {"supervised", "full"} <= {r.name for r in rows}:
        gap = paired_gap(rows)
        print("-" * 70)
        print(f"  full - supervised: {gap['mean_gap'] * 100:+.2f} mIoU points "
              f"(per seed: {', '.join(f'{g * 100:+.2f}' for g in gap['gaps'])})")
    print("=" * 70 + "\n")


def print_acceptance(checks: List[AcceptanceCheck]):
    print("=" * 70)
    print("ACCEPTANCE")
    print("=" * 70)
    for check in checks:
        print(f"  [{'PASS' if check.passed else 'FAIL'}] {check.name}: {check.detail}")
    print("=" * 70 + "\n")
