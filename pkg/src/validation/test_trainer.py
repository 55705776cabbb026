"""
End-to-end training on tiny 32x32 scenes: step semantics, determinism,
run-directory artifacts, evaluation and the ablation matrix.
"""

import csv
import json

import numpy as np
import pytest

from autograd.ops import softmax_channel
from autograd.tensor import GradientTape, Tensor, backward
from adaptation.losses import d1_loss, one_hot
from adaptation.selftrain import init_threshold_state
from generators.scenes import batch_iterator
from models.scene import SOURCE, TARGET
from nets.checkpoint import read_checkpoint
from nets.network import forward
from runstore import THRESHOLDS_FILE, RunStore
from training import trainer as trainer_module
from training.ablation import (
    ROWS, AblationRow, ablation_suite, acceptance_report, paired_gap, row_config, threshold_checks,
)
from training.trainer import (
    NonFiniteLossError, build_models, evaluate, evaluate_generator, init_train_state, run_training,
    train_step,
)

SUPERVISED = dict(ROWS)["supervised"]


def batches(cfg, seed=0):
    source = next(batch_iterator(cfg.data, SOURCE, cfg.train.batch_size, seed))
    target = next(batch_iterator(cfg.data, TARGET, cfg.train.batch_size, seed))
    return source, target


def snapshot(net):
    return {name: p.data.copy() for name, p in net.named_parameters()}


# ============================================================================
# Single step
# ============================================================================

class TestTrainStep:

    def test_supervised_only_skips_discriminators(self, tiny_config):
        cfg = tiny_config.with_overrides(SUPERVISED)
        models = build_models(cfg)
        state = init_train_state(cfg)
        before_d1, before_d2, before_g = snapshot(models.d1), snapshot(models.d2), snapshot(models.generator)

        entry = train_step(models, *batches(cfg), cfg, state)

        assert entry.losses.d1 == 0.0 and entry.losses.d2 == 0.0
        assert entry.losses.g1_s == entry.losses.g1_t == entry.losses.g2_t == entry.losses.g3 == 0.0
        assert entry.losses.total == entry.losses.g0
        assert entry.masked_fraction == 0.0
        for name, value in snapshot(models.d1).items():
            np.testing.assert_array_equal(value, before_d1[name])
        for name, value in snapshot(models.d2).items():
            np.testing.assert_array_equal(value, before_d2[name])
        assert any(not np.array_equal(v, before_g[k]) for k, v in snapshot(models.generator).items())

    def test_full_step_updates_every_network(self, tiny_config):
        models = build_models(tiny_config)
        state = init_train_state(tiny_config)
        before = {k: snapshot(n) for k, n in models.networks().items()}

        entry = train_step(models, *batches(tiny_config), tiny_config, state)

        assert entry.losses.d1 > 0.0 and entry.losses.d2 > 0.0
        assert entry.iteration == 0 and state.iteration == 1
        assert entry.lr_g == pytest.approx(tiny_config.optim.g_lr)
        for key, net in models.networks().items():
            changed = [not np.array_equal(v, before[key][n]) for n, v in snapshot(net).items()]
            assert any(changed), key

    def test_thresholds_start_inert(self, tiny_config):
        models = build_models(tiny_config)
        state = init_train_state(tiny_config)
        entry = train_step(models, *batches(tiny_config), tiny_config, state)
        assert 0.0 <= entry.masked_fraction <= 1.0
        assert all(0.0 <= t <= 1.0 for t in entry.thresholds)
        assert all(len(h) == 1 for h in state.thresholds.history)

    def test_fixed_threshold_row(self, tiny_config):
        cfg = row_config(tiny_config, dict(ROWS)["fixed_0.2"])
        models = build_models(cfg)
        state = init_train_state(cfg)
        for seed in range(2):
            entry = train_step(models, *batches(cfg, seed), cfg, state)
            assert entry.thresholds == [0.2] * cfg.data.num_classes

    def test_no_threshold_row_masks_everything(self, tiny_config):
        cfg = row_config(tiny_config, dict(ROWS)["no_threshold"])
        entry = train_step(build_models(cfg), *batches(cfg), cfg, init_train_state(cfg))
        assert entry.masked_fraction == 1.0

    def test_source_batch_needs_labels(self, tiny_config):
        _, target = batches(tiny_config)
        with pytest.raises(ValueError):
            train_step(build_models(tiny_config), target, target, tiny_config, init_train_state(tiny_config))

    def test_discriminator_step_leaves_generator_gradients(self, tiny_config):
        models = build_models(tiny_config)
        state = init_train_state(tiny_config)
        source, target = batches(tiny_config)
        train_step(models, source, target, tiny_config, state)
        grads = {n: p.grad.copy() for n, p in models.generator.named_parameters()}

        probs = softmax_channel(forward(models.generator, Tensor(source.images)))
        models.d1.zero_grad()
        with GradientTape():
            loss = d1_loss([forward(models.d1, probs.detach())],
                           forward(models.d1, Tensor(one_hot(source.labels, 6))))
        backward(loss)
        for name, p in models.generator.named_parameters():
            np.testing.assert_array_equal(p.grad, grads[name])
        assert any(p.grad is not None for p in models.d1.parameters())

    def test_same_seed_same_steps(self, tiny_config):
        entries = []
        for _ in range(2):
            models = build_models(tiny_config)
            state = init_train_state(tiny_config)
            entries.append([train_step(models, *batches(tiny_config, s), tiny_config, state).to_dict()
                            for s in range(2)])
        assert entries[0] == entries[1]


# ============================================================================
# Full runs
# ============================================================================

class TestRunTraining:

    def test_run_directory_artifacts(self, tiny_config, tmp_path):
        run_dir = tmp_path / "run"
        record = run_training(tiny_config, run_dir)

        for name in ("config.yaml", "metrics.csv", "thresholds.json", "threshold_trace.csv",
                     "summary.json", "eval_val.csv", "best.udas", "latest.udas", "final.udas"):
            assert (run_dir / name).exists(), name

        rows = RunStore(run_dir, tiny_config.data.class_names).read_metrics()
        assert [int(r['iteration']) for r in rows] == [0, 1, 2, 3]
        assert rows[0]['eval_miou'] == ""
        assert float(rows[1]['eval_miou']) == record.evaluations[0].miou
        assert "thr_rare" in rows[0]

        assert [e.iteration for e in record.evaluations] == [2, 4]
        assert record.best_miou == max(e.miou for e in record.evaluations)
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary['config_hash'] == tiny_config.config_hash()
        assert 0.0 <= summary['mean_threshold'] <= 1.0

    def test_saved_config_rebuilds_the_run(self, tiny_config, tmp_path):
        run_training(tiny_config, tmp_path / "run")
        assert RunStore.load_config(tmp_path / "run").config_hash() == tiny_config.config_hash()

    def test_same_seed_bit_identical_metrics(self, tiny_config, tmp_path):
        run_training(tiny_config, tmp_path / "a")
        run_training(tiny_config, tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
        assert (tmp_path / "a" / "final.udas").read_bytes() == (tmp_path / "b" / "final.udas").read_bytes()

    def test_zero_iterations_evaluates_fresh_network(self, tiny_config, tmp_path):
        cfg = tiny_config.with_overrides({'train.iterations': 0})
        record = run_training(cfg, tmp_path / "run")
        fresh, _ = evaluate_generator(build_models(cfg).generator, cfg)
        assert len(record.evaluations) == 1
        assert record.evaluations[0].iteration == 0
        assert record.final_miou == fresh.miou
        np.testing.assert_array_equal(record.evaluations[0].iou, fresh.iou)

    def test_checkpoint_round_trip_reproduces_evaluation(self, tiny_config, tmp_path):
        record = run_training(tiny_config, tmp_path / "run")
        report, _ = evaluate(record.final_checkpoint, tiny_config.eval.split, tiny_config)
        assert report.miou == record.final_miou
        np.testing.assert_array_equal(report.iou, record.evaluations[-1].iou)

    def test_evaluate_has_no_side_effects(self, tiny_config, tmp_path):
        record = run_training(tiny_config, tmp_path / "run")
        before = (tmp_path / "run" / "final.udas").read_bytes()
        first, cm_first = evaluate(record.final_checkpoint, "test", tiny_config)
        second, cm_second = evaluate(record.final_checkpoint, "test", tiny_config)
        assert first.miou == second.miou
        np.testing.assert_array_equal(first.iou, second.iou)
        np.testing.assert_array_equal(cm_first.counts, cm_second.counts)
        assert (tmp_path / "run" / "final.udas").read_bytes() == before

    def test_parallel_evaluation_matches_serial(self, tiny_config):
        generator = build_models(tiny_config).generator
        _, serial = evaluate_generator(generator, tiny_config, workers=1)
        _, parallel = evaluate_generator(generator, tiny_config, workers=3)
        np.testing.assert_array_equal(serial.counts, parallel.counts)

    def test_checkpoint_holds_all_networks(self, tiny_config, tmp_path):
        record = run_training(tiny_config, tmp_path / "run")
        prefixes = {name.split("/", 1)[0] for name in read_checkpoint(record.final_checkpoint)}
        assert prefixes == {"G", "D1", "D2"}

    def test_non_finite_loss_writes_diagnostic(self, tiny_config, tmp_path, monkeypatch):
        monkeypatch.setattr(trainer_module, "supervised_ce", lambda *args, **kwargs: Tensor(float("nan")))
        with pytest.raises(NonFiniteLossError) as info:
            run_training(tiny_config, tmp_path / "run")
        assert info.value.iteration == 0
        diagnostic = json.loads((tmp_path / "run" / "diagnostic.json").read_text())
        assert "g0" in diagnostic['non_finite']
        assert diagnostic['iteration'] == 0


# ============================================================================
# Ablation
# ============================================================================

class TestAblation:

    def test_eight_distinct_rows(self, tiny_config):
        assert len(ROWS) == 8
        assert [name for name, _ in ROWS][0] == "supervised"
        assert [name for name, _ in ROWS][-1] == "full"
        hashes = {row_config(tiny_config, overrides).config_hash() for _, overrides in ROWS}
        assert len(hashes) == 8

    def test_supervised_row_matches_source_only_config(self, tiny_config):
        standalone = tiny_config.with_overrides(SUPERVISED)
        assert row_config(tiny_config, SUPERVISED).config_hash() == standalone.config_hash()

    def test_suite_writes_table_in_row_order(self, tiny_config, tmp_path):
        cfg = tiny_config.with_overrides({'train.iterations': 1, 'eval.samples': 3})
        rows = ablation_suite(cfg, tmp_path / "ablation", seeds=[0], show_progress=False)
        with open(tmp_path / "ablation" / "ablation.csv", newline='') as f:
            table = list(csv.DictReader(f))
        assert [r['name'] for r in table] == [name for name, _ in ROWS]
        assert [int(r['row']) for r in table] == list(range(1, 9))

        standalone = run_training(cfg.with_overrides(SUPERVISED), tmp_path / "standalone")
        assert rows[0].mious == [standalone.final_miou]

        gap = paired_gap(rows)
        assert gap['gaps'] == [rows[-1].mious[0] - rows[0].mious[0]]

        report = json.loads((tmp_path / "ablation" / "acceptance.json").read_text())
        assert isinstance(report['passed'], bool)
        assert report['checks'][0]['name'] == "full beats supervised"


def write_thresholds(run_dir, rare_values):
    """Thresholds of a run with one moving class, one steady class and a rare class."""
    state = init_threshold_state(3, min_pixels=1, class_names=["road", "sky", "rare"])
    state.history = [
        [(s, 0.9 - 0.01 * s) for s in range(20)],
        [(s, 0.5) for s in range(20)],
        [(s, v) for s, v in enumerate(rare_values)],
    ]
    state.observed_steps = [20, 20, 0]
    RunStore(run_dir, []).write_json(THRESHOLDS_FILE, state.to_dict())


def ablation_rows(**means):
    return [AblationRow(i, name, {}, f"h{i}", seeds=[0, 1, 2], mious=[m] * 3)
            for i, (name, m) in enumerate(means.items(), start=1)]


class TestAcceptance:

    def test_directional_checks(self, tmp_path):
        rows = ablation_rows(supervised=0.50, no_self_training=0.55, no_threshold=0.563, full=0.56)
        checks = {c.name: c.passed for c in acceptance_report(rows, tmp_path)}
        assert checks == {
            "full beats supervised": True,
            "full >= no_self_training": True,
            "full >= no_threshold": True,
        }

    def test_ordering_fails_outside_tie(self, tmp_path):
        rows = ablation_rows(supervised=0.54, **{"fixed_0.2": 0.60}, full=0.56)
        checks = {c.name: c.passed for c in acceptance_report(rows, tmp_path)}
        assert checks == {"full beats supervised": False, "full >= fixed_0.2": False}

    def test_threshold_checks_pass_for_flat_rare_class(self, tmp_path):
        write_thresholds(tmp_path / "full" / "seed0", [1.0] * 20)
        checks = threshold_checks(tmp_path)
        assert len(checks) == 3
        assert all(c.passed for c in checks)
        assert "rare observed 0.00%" in checks[2].detail

    def test_threshold_checks_fail_for_moving_rare_class(self, tmp_path):
        write_thresholds(tmp_path / "full" / "seed0", [1.0, 0.4] * 10)
        passed = [c.passed for c in threshold_checks(tmp_path)]
        assert passed == [True, True, False]

    def test_out_of_range_threshold_fails(self, tmp_path):
        write_thresholds(tmp_path / "full" / "seed0", [1.5] * 20)
        assert not threshold_checks(tmp_path)[0].passed

    def test_missing_runs_are_skipped(self, tmp_path):
        assert threshold_checks(tmp_path) == []
