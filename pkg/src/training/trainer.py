"""
trainer.py

Alternating optimization of the segmentation generator G and the two
discriminators, plus evaluation on held-out target scenes.

One step: G on a source and a target batch (supervised, adversarial and
self-training terms, D1/D2 frozen), then D1 on detached maps against the
one-hot source labels, then D2 on detached target vs source maps.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from autograd.ops import softmax_channel
from autograd.optim import OptimizerState, make_optimizer, step_parameters
from autograd.tensor import GradientTape, Tensor, backward, set_debug
from adaptation.losses import (
    d1_loss, d2_loss, full_loss, g_adv1, g_adv2, one_hot, self_training_loss, supervised_ce,
)
from adaptation.selftrain import (
    ClassWeights, ThresholdState, build_mask, class_weights_from_source, export_threshold_trace,
    init_threshold_state, update_thresholds,
)
from generators.scenes import evaluation_batches, evaluation_seeds, make_batches, source_label_maps
from models.records import LossReport, RunRecord, RunRecordEntry, EvalReport
from models.scene import SOURCE, TARGET, SegmentationBatch
from models.training import TrainConfig
from nets.checkpoint import load_checkpoint, save_checkpoint
from nets.network import DiscriminatorSpec, Network, build_discriminator, build_generator, forward, predict
from runstore import (
    BEST_CHECKPOINT, FINAL_CHECKPOINT, LATEST_CHECKPOINT, SUMMARY_FILE, THRESHOLDS_FILE, TRACE_FILE,
    RunStore,
)
from validation.metrics import ConfusionMatrix

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """A loss term became NaN or infinite."""

    def __init__(self, iteration: int, terms: Dict[str, Optional[float]]):
        bad = sorted(k for k, v in terms.items() if v is not None and not math.isfinite(v))
        super().__init__(f"non-finite loss at iteration {iteration}: {', '.join(bad)}")
        self.iteration = iteration
        self.terms = terms


@dataclass
class AdaptationModels:
    generator: Network
    d1: Network
    d2: Network

    def networks(self) -> Dict[str, Network]:
        return {"G": self.generator, "D1": self.d1, "D2": self.d2}


@dataclass
class TrainState:
    thresholds: ThresholdState
    class_weights: ClassWeights
    opt_g: OptimizerState
    opt_d1: OptimizerState
    opt_d2: OptimizerState
    iteration: int = 0


def build_models(cfg: TrainConfig) -> AdaptationModels:
    """G, D1 and D2 seeded from run.seed (offsets 0, 1, 2)."""
    seed = cfg.run.seed
    classes = cfg.data.num_classes
    m = cfg.model
    generator = build_generator(classes, m.base_width, seed=seed, slope=m.generator_slope)
    d1 = build_discriminator(DiscriminatorSpec(tuple(m.d1_channels), slope=m.leaky_slope), classes, seed=seed + 1)
    d2 = build_discriminator(DiscriminatorSpec(tuple(m.d2_channels), slope=m.leaky_slope), classes, seed=seed + 2)
    logger.info(f"Models built: G {generator.parameter_count():,}, D1 {d1.parameter_count():,}, "
                f"D2 {d2.parameter_count():,} parameters")
    return AdaptationModels(generator, d1, d2)


def init_train_state(cfg: TrainConfig) -> TrainState:
    st = cfg.selftrain
    o = cfg.optim
    steps = cfg.train.iterations
    betas = (o.adam_beta1, o.adam_beta2)
    thresholds = init_threshold_state(
        cfg.data.num_classes, f=st.f, min_pixels=st.min_pixels, init_threshold=st.init_threshold,
        mode=st.threshold_mode, fixed_threshold=st.fixed_threshold, class_names=cfg.data.class_names,
    )
    weights = class_weights_from_source(
        source_label_maps(cfg.data, st.class_weight_samples), cfg.data.num_classes,
        mode=st.class_weight_mode, ignore_index=cfg.loss.ignore_index,
    )
    logger.info(f"Class weights ({weights.mode}): {np.round(weights.weights, 3).tolist()}")
    return TrainState(
        thresholds=thresholds,
        class_weights=weights,
        opt_g=make_optimizer("sgd", o.g_lr, o.g_lr_end, steps, o.power, o.momentum, o.weight_decay),
        opt_d1=make_optimizer("adam", o.d1_lr, o.d1_lr_end, steps, o.power, betas=betas, eps=o.adam_eps),
        opt_d2=make_optimizer("adam", o.d2_lr, o.d2_lr_end, steps, o.power, betas=betas, eps=o.adam_eps),
    )


# ============================================================================
# One iteration
# ============================================================================

def _check_finite(iteration: int, report: LossReport) -> None:
    terms = report.to_dict()
    if not all(math.isfinite(v) for v in terms.values()):
        raise NonFiniteLossError(iteration, terms)


def train_step(models: AdaptationModels, source: SegmentationBatch, target: SegmentationBatch,
               cfg: TrainConfig, state: TrainState) -> RunRecordEntry:
    """
    One G -> D1 -> D2 update. Disabled terms are neither built nor stepped;
    a skipped discriminator reports a loss of 0.
    """
    if source.labels is None:
        raise ValueError("source batch must carry labels")
    t = cfg.train
    eps = cfg.loss.eps
    ignore = cfg.loss.ignore_index
    classes = cfg.data.num_classes
    self_train_conf = t.use_g3 and state.thresholds.mode != "none"
    g, d1, d2 = models.generator, models.d1, models.d2

    # ----------------------------
    # Generator
    # ----------------------------
    d1.set_trainable(False)
    d2.set_trainable(False)
    g.zero_grad()
    pack = None
    with GradientTape():
        src_probs = softmax_channel(forward(g, Tensor(source.images)))
        tgt_probs = softmax_channel(forward(g, Tensor(target.images)))

        g0 = supervised_ce(src_probs, source.labels, ignore, eps)
        g1_s = g_adv1(forward(d1, src_probs), eps) if t.use_g1_s else None
        d1_target = forward(d1, tgt_probs) if (t.use_g1_t or self_train_conf) else None
        g1_t = g_adv1(d1_target, eps) if t.use_g1_t else None
        g2_t = g_adv2(forward(d2, tgt_probs), eps) if t.use_g2 else None

        g3 = None
        if t.use_g3:
            conf = d1_target.data if d1_target is not None else np.ones_like(tgt_probs.data[:, :1])
            update_thresholds(conf, tgt_probs.data.argmax(axis=1), state.thresholds, state.iteration)
            pack = build_mask(conf, tgt_probs.data, state.thresholds)
            g3 = self_training_loss(tgt_probs, pack.pseudo, pack.mask, state.class_weights.weights, eps)

        total, report = full_loss(g0, g1_s, g1_t, g2_t, g3, cfg.loss.weights)
    _check_finite(state.iteration, report)
    backward(total)
    lr_g = step_parameters(g.parameters(), state.opt_g)

    # ----------------------------
    # D1: ground truth vs generated
    # ----------------------------
    lr_d1 = state.opt_d1.lr
    if cfg.needs_d1:
        d1.set_trainable(True)
        d1.zero_grad()
        with GradientTape():
            generated = [forward(d1, src_probs.detach()), forward(d1, tgt_probs.detach())]
            truth = forward(d1, Tensor(one_hot(source.labels, classes, ignore)))
            loss_d1 = d1_loss(generated, truth, eps)
        report.d1 = loss_d1.item()
        _check_finite(state.iteration, report)
        backward(loss_d1)
        lr_d1 = step_parameters(d1.parameters(), state.opt_d1)

    # ----------------------------
    # D2: source vs target maps
    # ----------------------------
    lr_d2 = state.opt_d2.lr
    if cfg.needs_d2:
        d2.set_trainable(True)
        d2.zero_grad()
        with GradientTape():
            loss_d2 = d2_loss(forward(d2, tgt_probs.detach()), forward(d2, src_probs.detach()), eps)
        report.d2 = loss_d2.item()
        _check_finite(state.iteration, report)
        backward(loss_d2)
        lr_d2 = step_parameters(d2.parameters(), state.opt_d2)

    d1.set_trainable(True)
    d2.set_trainable(True)

    entry = RunRecordEntry(
        iteration=state.iteration,
        losses=report,
        lr_g=lr_g,
        lr_d1=lr_d1,
        lr_d2=lr_d2,
        masked_fraction=pack.masked_fraction if pack is not None else 0.0,
        thresholds=list(state.thresholds.thresholds),
    )
    state.iteration += 1
    return entry


# ============================================================================
# Evaluation
# ============================================================================

def _confusion(generator: Network, cfg: TrainConfig, split: str, seeds: List[int]) -> ConfusionMatrix:
    cm = ConfusionMatrix(cfg.data.num_classes, cfg.loss.ignore_index)
    for batch in evaluation_batches(cfg.data, split, seeds, cfg.eval.batch_size, domain=TARGET):
        cm.accumulate(predict(generator, batch.images), batch.labels)
    return cm


def evaluate_generator(generator: Network, cfg: TrainConfig, split: Optional[str] = None,
                       samples: Optional[int] = None,
                       workers: Optional[int] = None) -> Tuple[EvalReport, ConfusionMatrix]:
    """
    mIoU of G on the first `samples` target scenes of `split`.

    With workers > 1 the scenes are split into contiguous chunks evaluated
    on a thread pool; the chunk matrices are summed in chunk order.
    """
    split = split or cfg.eval.split
    samples = samples or cfg.eval.samples
    workers = workers or cfg.eval.workers
    seeds = evaluation_seeds(split, samples)

    if workers > 1:
        chunks = [list(c) for c in np.array_split(seeds, workers) if len(c)]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda chunk: _confusion(generator, cfg, split, chunk), chunks))
        cm = parts[0]
        for part in parts[1:]:
            cm = cm.merge(part)
    else:
        cm = _confusion(generator, cfg, split, seeds)

    report = EvalReport(
        split=split,
        samples=samples,
        class_names=list(cfg.data.class_names),
        iou=[float(v) for v in cm.iou_per_class()],
        miou=cm.miou(),
        pixel_accuracy=cm.pixel_accuracy(),
    )
    return report, cm


def evaluate(checkpoint: Union[str, Path], split: str, cfg: TrainConfig,
             samples: Optional[int] = None) -> Tuple[EvalReport, ConfusionMatrix]:
    """Rebuild the networks from `cfg`, load `checkpoint` and evaluate G."""
    models = build_models(cfg)
    load_checkpoint(checkpoint, models.networks())
    return evaluate_generator(models.generator, cfg, split, samples)


# ============================================================================
# Full run
# ============================================================================

class Trainer:
    """
    Runs one configuration end to end inside a run directory.

    Artifacts: config.yaml, metrics.csv, thresholds.json,
    threshold_trace.csv, eval_<split>.csv, best/latest/final checkpoints,
    summary.json.
    """

    def __init__(self, cfg: TrainConfig, run_dir: Union[str, Path], show_progress: Optional[bool] = None):
        self.cfg = cfg.validate()
        self.store = RunStore(run_dir, cfg.data.class_names)
        self.show_progress = cfg.logging.show_progress if show_progress is None else show_progress

    def run(self) -> RunRecord:
        cfg = self.cfg
        store = self.store
        set_debug(cfg.run.debug)
        store.save_config(cfg)

        models = build_models(cfg)
        state = init_train_state(cfg)
        record = RunRecord(run_dir=str(store.run_dir), config_hash=cfg.config_hash())
        source = make_batches(cfg.data, SOURCE, cfg.train.batch_size, cfg.run.seed)
        target = make_batches(cfg.data, TARGET, cfg.train.batch_size, cfg.run.seed)

        started = time.perf_counter()
        iterations = cfg.train.iterations
        try:
            if iterations == 0:
                self._evaluate(models, record, iteration=0)
            progress = tqdm(range(iterations), desc=cfg.run.name, disable=not self.show_progress)
            for it in progress:
                t0 = time.perf_counter()
                try:
                    entry = train_step(models, next(source), next(target), cfg, state)
                except NonFiniteLossError as e:
                    store.write_diagnostic(e.iteration, e.terms, list(state.thresholds.thresholds))
                    raise

                done = it + 1
                if done % cfg.train.eval_interval == 0 or done == iterations:
                    entry.eval_miou = self._evaluate(models, record, iteration=done)
                if cfg.train.checkpoint_interval and done % cfg.train.checkpoint_interval == 0:
                    save_checkpoint(store.path(LATEST_CHECKPOINT), models.networks())

                entry.seconds = time.perf_counter() - t0
                record.entries.append(entry)
                store.append_metrics([entry])

                if done % cfg.logging.log_interval == 0:
                    r = entry.losses
                    logger.info(f"[{done}/{iterations}] total={r.total:.4f} g0={r.g0:.4f} "
                                f"d1={r.d1:.4f} d2={r.d2:.4f} masked={entry.masked_fraction:.3f} "
                                f"lr_g={entry.lr_g:.2e}")
                    progress.set_postfix(total=f"{r.total:.3f}", miou=record.best_miou)
        finally:
            for stream in (source, target):
                if hasattr(stream, "close"):
                    stream.close()

        record.final_checkpoint = str(save_checkpoint(store.path(FINAL_CHECKPOINT), models.networks()))
        store.write_json(THRESHOLDS_FILE, state.thresholds.to_dict())
        export_threshold_trace(state.thresholds, store.path(TRACE_FILE))
        record.seconds = time.perf_counter() - started
        summary = record.to_dict()
        summary['class_weights'] = state.class_weights.to_dict()
        summary['mean_threshold'] = state.thresholds.mean_threshold()
        store.write_json(SUMMARY_FILE, summary)
        logger.info(f"Run finished in {record.seconds:.1f}s; best mIoU {record.best_miou} "
                    f"at iteration {record.best_iteration}")
        return record

    def _evaluate(self, models: AdaptationModels, record: RunRecord, iteration: int) -> float:
        report, cm = evaluate_generator(models.generator, self.cfg)
        report.iteration = iteration
        record.evaluations.append(report)
        cm.write_report(self.store.path(f"eval_{report.split}.csv"), self.cfg.data.class_names)
        logger.info(f"Evaluation at iteration {iteration}: mIoU {report.miou:.4f} on {report.split}")
        if record.best_miou is None or report.miou > record.best_miou:
            record.best_miou = report.miou
            record.best_iteration = iteration
            save_checkpoint(self.store.path(BEST_CHECKPOINT), models.networks())
        return report.miou


def run_training(cfg: TrainConfig, run_dir: Union[str, Path],
                 show_progress: Optional[bool] = None) -> RunRecord:
    return Trainer(cfg, run_dir, show_progress).run()
