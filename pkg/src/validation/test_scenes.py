"""
Procedural scenes: determinism, domain shift, class census and dumps.
"""

from dataclasses import replace
from itertools import islice

import numpy as np
import pytest
from PIL import Image

from models.scene import FREQUENCY_TARGETS, SOURCE, TARGET, SceneConfig, SegmentationBatch
from generators.scenes import (
    PrefetchIterator, SceneGenerator, batch_iterator, class_census, dump_scenes, evaluation_batches,
    evaluation_seeds, generate_scene, make_batches, split_seed_range,
)

NO_SHIFT = dict(palette_rotation=0.0, gamma=0.0, noise_amplitude=0.0, texture_frequency=0.0)


@pytest.fixture
def small():
    return SceneConfig(height=32, width=32)


class TestGenerateScene:

    def test_domains_share_labels_not_images(self, small):
        src_img, src_lbl = generate_scene(17, small, SOURCE)
        tgt_img, tgt_lbl = generate_scene(17, small, TARGET)
        np.testing.assert_array_equal(src_lbl, tgt_lbl)
        assert not np.array_equal(src_img, tgt_img)

    def test_zero_shift_renders_identical_images(self, small):
        cfg = replace(small, **NO_SHIFT)
        assert not cfg.shift_enabled
        src_img, _ = generate_scene(5, cfg, SOURCE)
        tgt_img, _ = generate_scene(5, cfg, TARGET)
        np.testing.assert_array_equal(src_img, tgt_img)

    def test_deterministic(self, small):
        a = generate_scene(3, small, TARGET)
        b = generate_scene(3, small, TARGET)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_shapes_and_ranges(self, small):
        image, labels = generate_scene(0, small, TARGET)
        assert image.shape == (3, 32, 32)
        assert labels.shape == (32, 32)
        assert labels.dtype == np.int64
        assert image.min() >= 0.0 and image.max() <= 1.0
        assert labels.min() >= 0 and labels.max() < small.num_classes

    def test_unknown_domain(self, small):
        with pytest.raises(ValueError):
            SceneGenerator(small).generate(0, "mars")

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SceneGenerator(SceneConfig(height=31))
        with pytest.raises(ValueError):
            SceneGenerator(SceneConfig(frequency_targets=(0.5, 0.5)))
        with pytest.raises(ValueError):
            SceneGenerator(SceneConfig(frequency_targets=(0.4, 0.2, 0.2, 0.1, 0.05, 0.05)))
        with pytest.raises(ValueError):
            SceneGenerator(SceneConfig(frequency_targets=(0.4648, 0.252, 0.285, 0.0, 0.0, 0.0012)))


class TestCensus:

    def test_targets_change_the_layout(self):
        base = SceneConfig()
        moved = replace(base, frequency_targets=(0.2, 0.5, 0.2, 0.05, 0.049, 0.001))
        differs = [not np.array_equal(generate_scene(seed, base)[1], generate_scene(seed, moved)[1])
                   for seed in range(5)]
        assert all(differs)

    def test_raising_a_target_raises_its_share(self):
        base = class_census(SceneConfig(), 200)['frequencies']
        more_road = class_census(
            SceneConfig(frequency_targets=(0.2658, 0.40, 0.285, 0.031, 0.017, 0.0012)), 200)['frequencies']
        more_circles = class_census(
            SceneConfig(frequency_targets=(0.3828, 0.252, 0.285, 0.062, 0.017, 0.0012)), 200)['frequencies']
        assert more_road['road'] > base['road'] + 0.05
        assert more_circles['circle'] > 1.5 * base['circle']

    def test_frequencies_track_targets(self):
        census = class_census(SceneConfig(), 1000)
        for name, target in zip(SceneConfig().class_names, FREQUENCY_TARGETS):
            freq = census['frequencies'][name]
            assert abs(freq - target) <= 0.3 * target, f"{name}: {freq:.4f} vs {target:.4f}"
        assert 0.0 < census['rare_presence'] < 0.15

    def test_rare_class_stays_rare(self):
        census = class_census(SceneConfig(), 300, split="val")
        assert census['frequencies']['rare'] < 0.02


class TestStreams:

    def test_same_epoch_seed_same_stream(self, small):
        a = list(islice(batch_iterator(small, SOURCE, 2, epoch_seed=4), 3))
        b = list(islice(batch_iterator(small, SOURCE, 2, epoch_seed=4), 3))
        for x, y in zip(a, b):
            assert x.seeds == y.seeds
            np.testing.assert_array_equal(x.images, y.images)
            np.testing.assert_array_equal(x.labels, y.labels)

    def test_target_batches_are_unlabelled(self, small):
        batch = next(batch_iterator(small, TARGET, 2, epoch_seed=0))
        assert batch.labels is None
        assert batch.size == 2

    def test_batches_stay_inside_their_split(self, small):
        train = split_seed_range("train")
        batch = next(batch_iterator(small, SOURCE, 4, epoch_seed=1, split="test"))
        assert all(s not in train for s in batch.seeds)
        assert all(s in split_seed_range("test") for s in batch.seeds)

    def test_split_ranges_are_disjoint(self):
        ranges = [set(split_seed_range(s)[:1000]) | {split_seed_range(s)[-1]} for s in ("train", "val", "test")]
        assert split_seed_range("train").stop <= split_seed_range("val").start
        assert split_seed_range("val").stop <= split_seed_range("test").start
        assert not (ranges[0] & ranges[1]) and not (ranges[1] & ranges[2]) and not (ranges[0] & ranges[2])

    def test_batches_are_read_only(self, small):
        batch = next(batch_iterator(small, SOURCE, 1, epoch_seed=0))
        with pytest.raises(ValueError):
            batch.images[0, 0, 0, 0] = 1.0

    def test_target_mean_differs_from_source(self):
        cfg = SceneConfig()
        source = [b.images.mean() for b in islice(batch_iterator(cfg, SOURCE, 1, epoch_seed=0), 100)]
        target = [b.images.mean() for b in islice(batch_iterator(cfg, TARGET, 1, epoch_seed=0), 100)]
        standard_error = np.std(source, ddof=1) / np.sqrt(len(source))
        assert abs(np.mean(target) - np.mean(source)) > standard_error

    def test_prefetch_preserves_order(self, small):
        cfg = replace(small, prefetch=2)
        stream = make_batches(cfg, SOURCE, 2, epoch_seed=9)
        assert isinstance(stream, PrefetchIterator)
        try:
            prefetched = [b.seeds for b in islice(stream, 4)]
        finally:
            stream.close()
        direct = [b.seeds for b in islice(batch_iterator(small, SOURCE, 2, epoch_seed=9), 4)]
        assert prefetched == direct

    def test_prefetch_reraises_worker_errors(self):
        def broken():
            yield 1
            raise RuntimeError("scene failed")

        stream = PrefetchIterator(broken(), depth=1)
        assert next(stream) == 1
        with pytest.raises(RuntimeError):
            next(stream)

    def test_evaluation_batches_cover_seeds(self, small):
        seeds = evaluation_seeds("val", 5)
        assert seeds == list(range(1_000_000, 1_000_005))
        batches = list(evaluation_batches(small, "val", seeds, batch_size=2))
        assert [b.size for b in batches] == [2, 2, 1]
        assert all(b.labels is not None and b.domain == TARGET for b in batches)

    def test_batch_validation(self):
        with pytest.raises(ValueError):
            SegmentationBatch(images=np.zeros((1, 3, 4, 4)), labels=np.zeros((1, 5, 5)), domain=SOURCE)


class TestDump:

    def test_writes_images_and_label_maps(self, small, tmp_path):
        written = dump_scenes(small, tmp_path, split="val", count=2)
        assert len(written) == 8
        assert (tmp_path / "source" / "val_0.ppm").exists()
        assert (tmp_path / "target" / "val_1.pgm").exists()

        image = Image.open(tmp_path / "target" / "val_0.ppm")
        assert image.mode == "RGB" and image.size == (32, 32)
        labels = np.asarray(Image.open(tmp_path / "source" / "val_0.pgm"))
        _, expected = generate_scene(split_seed_range("val")[0], small, SOURCE)
        np.testing.assert_array_equal(labels, expected)
