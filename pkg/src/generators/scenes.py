"""
scenes.py

Labelled source scenes and appearance-shifted target scenes.

A scene is fully determined by (seed, config, domain). Both domains draw
the same geometry from a seed, so target ground truth exists for
evaluation while training batches from the target domain carry no labels.
"""

import logging
import queue
import threading
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from PIL import Image

import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from distributions.appearance import AppearanceModel
from distributions.geometry import GeometryDistributions
from models.scene import SceneConfig, SegmentationBatch, DOMAINS, SOURCE, TARGET

logger = logging.getLogger(__name__)

SPLIT_SIZE = 1_000_000
SPLIT_OFFSETS = {'train': 0, 'val': SPLIT_SIZE, 'test': 2 * SPLIT_SIZE}


def split_seed_range(split: str) -> range:
    if split not in SPLIT_OFFSETS:
        raise ValueError(f"Unknown split: {split}")
    start = SPLIT_OFFSETS[split]
    return range(start, start + SPLIT_SIZE)


class SceneGenerator:
    """
    Renders scenes for one SceneConfig.

    Geometry and the shared render use `default_rng(seed)`; the target
    shift draws from its own stream `default_rng([seed, 1])`.
    """

    def __init__(self, cfg: SceneConfig):
        cfg.validate()
        self.cfg = cfg
        self.geometry = GeometryDistributions(cfg)
        self.appearance = AppearanceModel(cfg)

    def generate(self, seed: int, domain: str = SOURCE) -> Tuple[np.ndarray, np.ndarray]:
        """(3 x H x W float image in [0, 1], H x W int64 labels)."""
        if domain not in DOMAINS:
            raise ValueError(f"Unknown domain: {domain}")
        rng = np.random.default_rng(seed)
        labels = self.geometry.sample_labels(rng)
        image = self.appearance.render(labels, rng)
        if domain == TARGET:
            image = self.appearance.shift(image, np.random.default_rng([seed, 1]))
        return image, labels

    def batch(self, seeds, domain: str, with_labels: bool) -> SegmentationBatch:
        scenes = [self.generate(int(s), domain) for s in seeds]
        images = np.stack([img for img, _ in scenes])
        labels = np.stack([lbl for _, lbl in scenes]) if with_labels else None
        return SegmentationBatch(images=images, labels=labels, domain=domain,
                                 seeds=tuple(int(s) for s in seeds))


def generate_scene(seed: int, cfg: SceneConfig, domain: str = SOURCE) -> Tuple[np.ndarray, np.ndarray]:
    """Convenience wrapper around SceneGenerator.generate."""
    return SceneGenerator(cfg).generate(seed, domain)


# ============================================================================
# Streams
# ============================================================================

def batch_iterator(cfg: SceneConfig, domain: str, batch_size: int, epoch_seed: int,
                   split: str = "train", with_labels: Optional[bool] = None) -> Iterator[SegmentationBatch]:
    """
    Infinite deterministic stream of batches from one split.

    Scene seeds are drawn from the split's range with an rng keyed on
    (epoch_seed, split, domain). Target batches are unlabelled unless
    `with_labels` says otherwise.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    seeds = split_seed_range(split)
    generator = SceneGenerator(cfg)
    labelled = (domain == SOURCE) if with_labels is None else with_labels
    rng = np.random.default_rng([epoch_seed, list(SPLIT_OFFSETS).index(split), DOMAINS.index(domain)])
    while True:
        picks = seeds.start + rng.integers(0, SPLIT_SIZE, size=batch_size)
        yield generator.batch(picks, domain, labelled)


class PrefetchIterator:
    """
    Runs an iterator on one worker thread, handing items over through a
    bounded queue. Order is preserved; worker exceptions re-raise on `next`.
    """

    _DONE = object()

    def __init__(self, source: Iterator, depth: int = 2):
        if depth < 1:
            raise ValueError(f"prefetch depth must be >= 1, got {depth}")
        self._source = source
        self._queue: "queue.Queue" = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._work, name="scene-prefetch", daemon=True)
        self._thread.start()

    def _work(self):
        try:
            for item in self._source:
                while not self._stop.is_set():
                    try:
                        self._queue.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return
            self._queue.put(self._DONE)
        except Exception as e:
            self._queue.put(e)

    def __iter__(self):
        return self

    def __next__(self):
        item = self._queue.get()
        if item is self._DONE:
            raise StopIteration
        if isinstance(item, Exception):
            raise item
        return item

    def close(self):
        self._stop.set()
        self._thread.join(timeout=1.0)


def make_batches(cfg: SceneConfig, domain: str, batch_size: int, epoch_seed: int,
                 split: str = "train") -> Iterator[SegmentationBatch]:
    """batch_iterator, prefetched on a worker thread when `cfg.prefetch > 0`."""
    stream = batch_iterator(cfg, domain, batch_size, epoch_seed, split)
    if cfg.prefetch > 0:
        return PrefetchIterator(stream, cfg.prefetch)
    return stream


def evaluation_seeds(split: str, samples: int) -> List[int]:
    """The first `samples` seeds of a split; fixed across runs."""
    seeds = split_seed_range(split)
    if not 0 < samples <= len(seeds):
        raise ValueError(f"samples must lie in [1, {len(seeds)}], got {samples}")
    return list(seeds[:samples])


def evaluation_batches(cfg: SceneConfig, split: str, seeds: List[int], batch_size: int,
                       domain: str = TARGET) -> Iterator[SegmentationBatch]:
    """Labelled batches over a fixed seed list."""
    generator = SceneGenerator(cfg)
    for start in range(0, len(seeds), batch_size):
        yield generator.batch(seeds[start:start + batch_size], domain, with_labels=True)


# ============================================================================
# Census and dumps
# ============================================================================

def source_label_maps(cfg: SceneConfig, n: int, split: str = "train") -> Iterator[np.ndarray]:
    """Label maps of the first `n` scenes of a split, without rendering images."""
    geometry = SceneGenerator(cfg).geometry
    for seed in split_seed_range(split)[:n]:
        yield geometry.sample_labels(np.random.default_rng(seed))


def class_census(cfg: SceneConfig, n: int, split: str = "train") -> Dict[str, object]:
    """Empirical pixel frequency per class and share of images containing the rare class."""
    counts = np.zeros(cfg.num_classes, dtype=np.int64)
    rare_images = 0
    rare = cfg.num_classes - 1
    for labels in source_label_maps(cfg, n, split):
        binned = np.bincount(labels.ravel(), minlength=cfg.num_classes)
        counts += binned
        rare_images += int(binned[rare] > 0)
    frequencies = counts / counts.sum()
    return {
        'samples': n,
        'frequencies': {name: float(f) for name, f in zip(cfg.class_names, frequencies)},
        'targets': {name: float(t) for name, t in zip(cfg.class_names, cfg.frequency_targets)},
        'rare_presence': rare_images / n if n else 0.0,
    }


def dump_scenes(cfg: SceneConfig, out_dir: Union[str, Path], split: str = "train",
                count: int = 16) -> List[Path]:
    """
    Write `<out>/<domain>/<split>_<index>.ppm` images (binary P6) and the
    matching `.pgm` label maps (binary P5, raw class ids).
    """
    out_dir = Path(out_dir)
    generator = SceneGenerator(cfg)
    written = []
    for domain in DOMAINS:
        folder = out_dir / domain
        folder.mkdir(parents=True, exist_ok=True)
        for index, seed in enumerate(split_seed_range(split)[:count]):
            image, labels = generator.generate(seed, domain)
            rgb = np.round(image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
            image_path = folder / f"{split}_{index}.ppm"
            label_path = folder / f"{split}_{index}.pgm"
            Image.fromarray(rgb).save(image_path, format="PPM")
            Image.fromarray(labels.astype(np.uint8)).save(label_path, format="PPM")
            written.extend([image_path, label_path])
    logger.info(f"Dumped {count} {split} scenes per domain to {out_dir}")
    return written


if __name__ == "__main__":
    config = SceneConfig()
    census = class_census(config, 200)
    print("\nClass census (200 train scenes):")
    for name, freq in census['frequencies'].items():
        print(f"  {name:<12} {freq:.4f}  (target {census['targets'][name]:.4f})")
    print(f"  rare class present in {census['rare_presence'] * 100:.1f}% of images")
