import sys
import logging
import traceback
from pathlib import Path
from datetime import datetime
from typing import List, Optional

sys.path.append(str(Path(__file__).parent))

from config import DEFAULT_CONFIG, load_config, parse_override, resolve_run_dir
from adaptation.selftrain import ThresholdState, export_threshold_trace, summarize_thresholds
from generators.scenes import class_census, dump_scenes
from models.training import TrainConfig
from runstore import LOG_FILE, THRESHOLDS_FILE, TRACE_FILE, RunStore
from training.ablation import ablation_suite, acceptance_report, print_ablation, print_acceptance
from training.trainer import evaluate, run_training
from validation.metrics import print_report

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def setup_logging(level: str = "INFO", log_file: Optional[Path] = None):
    """Console logging, plus a log file when given."""
    handlers = [logging.StreamHandler()]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def banner(title: str, level=logging.INFO):
    logger.log(level, "\n" + "=" * 70)
    logger.log(level, title)
    logger.log(level, "=" * 70)


class TrainingPipeline:
    """
    Entry point behind every CLI command: train, eval, ablate, dump-data
    and trace-thresholds.
    """

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[List[str]] = None):
        self.config_path = config_path
        self.overrides = list(overrides or [])
        self.start_time = None

    def _load(self) -> TrainConfig:
        cfg = load_config(self.config_path, self.overrides)
        logger.info(f"Configuration loaded from {self.config_path or 'defaults'} "
                    f"({len(self.overrides)} overrides), hash {cfg.config_hash()[:12]}")
        return cfg

    def _run(self, title: str, action):
        self.start_time = datetime.now()
        banner(title)
        logger.info(f"Start Time: {self.start_time.strftime('%Y-%m-%d %H:%M:%S')}")
        try:
            result = action()
        except Exception as e:
            banner(f"{title} FAILED", logging.ERROR)
            logger.error(f"Error: {e}")
            traceback.print_exc()
            logger.error("=" * 70 + "\n")
            raise
        duration = datetime.now() - self.start_time
        banner(f"{title} COMPLETED")
        logger.info(f"Duration: {duration}")
        logger.info("=" * 70 + "\n")
        return result

    # ----------------------------
    # Commands
    # ----------------------------
    def train(self, run_dir: Optional[str] = None):
        cfg = self._load()
        run_dir = Path(run_dir) if run_dir else resolve_run_dir(cfg)
        setup_logging(cfg.logging.level, run_dir / LOG_FILE)

        def action():
            record = run_training(cfg, run_dir)
            if record.evaluations:
                last = record.evaluations[-1]
                print_report(last.class_names, last.iou, last.miou,
                             title=f"TARGET {last.split.upper()} AFTER {last.iteration} ITERATIONS")
            RunStore(run_dir, cfg.data.class_names).print_stats()
            return record

        return self._run("DOMAIN ADAPTATION TRAINING", action)

    def evaluate(self, checkpoint: str, split: str, samples: Optional[int] = None):
        checkpoint = Path(checkpoint)
        if self.config_path is None:
            cfg = RunStore.load_config(checkpoint.parent)
            cfg = cfg.with_overrides(dict(parse_override(o) for o in self.overrides)).validate()
        else:
            cfg = self._load()
        setup_logging(cfg.logging.level)

        def action():
            report, cm = evaluate(checkpoint, split, cfg, samples)
            out = checkpoint.parent / f"eval_{split}_{checkpoint.stem}.csv"
            cm.write_report(out, cfg.data.class_names)
            print_report(report.class_names, report.iou, report.miou,
                         title=f"TARGET {split.upper()} ({report.samples} scenes)")
            return report

        return self._run("EVALUATION", action)

    def ablate(self, out_dir: Optional[str] = None):
        cfg = self._load()
        out = Path(out_dir) if out_dir else resolve_run_dir(cfg).parent / f"{cfg.run.name}_ablation"
        setup_logging(cfg.logging.level, out / LOG_FILE)

        def action():
            rows = ablation_suite(cfg, out, show_progress=False)
            print_ablation(rows)
            print_acceptance(acceptance_report(rows, out))
            return rows

        return self._run("ABLATION SUITE", action)

    def dump_data(self, out_dir: str, split: str = "train", count: int = 16):
        cfg = self._load()
        setup_logging(cfg.logging.level)

        def action():
            written = dump_scenes(cfg.data, out_dir, split, count)
            census = class_census(cfg.data, max(count, 200), split)
            print("\n" + "=" * 70)
            print(f"CLASS CENSUS ({census['samples']} {split} scenes)")
            print("=" * 70)
            for name, freq in census['frequencies'].items():
                print(f"  {name:<20} {freq:.4f}  (target {census['targets'][name]:.4f})")
            print(f"  rare class present in {census['rare_presence'] * 100:.1f}% of images")
            print("=" * 70 + "\n")
            return written

        return self._run("SCENE DUMP", action)

    def trace_thresholds(self, run_dir: str, out: Optional[str] = None):
        setup_logging()
        if not Path(run_dir).is_dir():
            raise FileNotFoundError(f"Run directory not found: {run_dir}")
        store = RunStore(run_dir, [])

        def action():
            state = ThresholdState.from_dict(store.read_json(THRESHOLDS_FILE))
            path = export_threshold_trace(state, Path(out) if out else store.path(TRACE_FILE))
            print("\n" + "=" * 70)
            print(f"THRESHOLDS (f={state.f:g}, mode={state.mode})")
            print("=" * 70)
            for row in summarize_thresholds(state):
                print(f"  {row['class_name']:<20} final {row['final']:.4f}  "
                      f"avg {row['time_average']:.4f}  changes {row['changes']:>6}  "
                      f"flat {row['flat_fraction'] * 100:5.1f}%")
            print(f"  mean final threshold: {state.mean_threshold():.4f}")
            print("=" * 70 + "\n")
            return path

        return self._run("THRESHOLD TRACE", action)


def main(argv: Optional[List[str]] = None):
    """Main entry point for CLI."""
    import argparse

    parser = argparse.ArgumentParser(
        description="Unsupervised domain adaptation for segmentation with dual discriminators "
                    "and class-wise adaptive self-training",
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def add_config(p, default=str(DEFAULT_CONFIG)):
        p.add_argument('--config', default=default,
                       help='YAML or `key = value` configuration file')
        p.add_argument('--override', action='append', default=[], metavar='KEY=VALUE',
                       help='Override one dotted config key (repeatable)')

    train = commands.add_parser('train', help='Train G, D1 and D2')
    add_config(train)
    train.add_argument('--run-dir', help='Run directory (default: run.output_dir/run.name)')

    ev = commands.add_parser('eval', help='Evaluate a checkpoint on target scenes')
    add_config(ev, default=None)
    ev.add_argument('--checkpoint', required=True, help='UDAS checkpoint file')
    ev.add_argument('--split', default='val', choices=['train', 'val', 'test'])
    ev.add_argument('--samples', type=int, help='Number of scenes (default: eval.samples)')

    ablate = commands.add_parser('ablate', help='Run the eight-row ablation matrix')
    add_config(ablate)
    ablate.add_argument('--out', help='Output directory for the ablation runs')

    dump = commands.add_parser('dump-data', help='Write PPM/PGM scenes for both domains')
    add_config(dump)
    dump.add_argument('--out', required=True, help='Output directory')
    dump.add_argument('--split', default='train', choices=['train', 'val', 'test'])
    dump.add_argument('--count', type=int, default=16, help='Scenes per domain')

    trace = commands.add_parser('trace-thresholds', help='Export the threshold trace of a run')
    trace.add_argument('--run', required=True, help='Run directory containing thresholds.json')
    trace.add_argument('--out', help='Output CSV (default: <run>/threshold_trace.csv)')

    args = parser.parse_args(argv)

    if args.command == 'trace-thresholds':
        return TrainingPipeline().trace_thresholds(args.run, args.out)

    pipeline = TrainingPipeline(config_path=args.config, overrides=args.override)
    if args.command == 'train':
        return pipeline.train(args.run_dir)
    if args.command == 'eval':
        return pipeline.evaluate(args.checkpoint, args.split, args.samples)
    if args.command == 'ablate':
        return pipeline.ablate(args.out)
    return pipeline.dump_data(args.out, args.split, args.count)


if __name__ == "__main__":
    main()
