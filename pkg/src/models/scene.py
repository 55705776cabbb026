from dataclasses import dataclass, field, asdict
from typing import Optional, Tuple

import numpy as np

SOURCE = "source"
TARGET = "target"
DOMAINS = (SOURCE, TARGET)

CLASS_NAMES = ("background", "road", "building", "circle", "pole", "rare")

# Reference pixel share of each class, in CLASS_NAMES order. The base shape
# sizes in distributions/geometry.py reproduce these shares at 64x64.
FREQUENCY_TARGETS = (0.4138, 0.252, 0.285, 0.031, 0.017, 0.0012)


@dataclass
class SceneConfig:
    """
    Procedural scene settings.
    Maps to: the `data.*` config section

    Geometry is shared by both domains; the shift parameters only change
    appearance on the target side. All-zero shift parameters make the two
    domains render identical images.
    """
    height: int = 64
    width: int = 64
    num_classes: int = 6
    class_names: Tuple[str, ...] = CLASS_NAMES
    frequency_targets: Tuple[float, ...] = FREQUENCY_TARGETS
    palette_rotation: float = 45.0    # degrees about the gray axis
    gamma: float = 0.4                # target exponent is 1 + gamma
    noise_amplitude: float = 0.06     # correlated noise std
    noise_scale: int = 8              # noise grid cells per side
    texture_frequency: float = 0.15   # cycles per pixel
    texture_amplitude: float = 0.08
    jitter: float = 0.04              # per-image colour jitter, both domains
    rare_probability: float = 0.1
    prefetch: int = 0

    def validate(self):
        if self.height % 2 or self.width % 2:
            raise ValueError(f"image size must be even, got {self.height}x{self.width}")
        if self.height < 32 or self.width < 32:
            raise ValueError(f"image size must be at least 32x32, got {self.height}x{self.width}")
        if self.num_classes != len(CLASS_NAMES):
            raise ValueError(f"scene geometry draws {len(CLASS_NAMES)} classes, got num_classes={self.num_classes}")
        if len(self.class_names) != self.num_classes:
            raise ValueError("class_names length must equal num_classes")
        if len(self.frequency_targets) != self.num_classes:
            raise ValueError("frequency_targets length must equal num_classes")
        if abs(sum(self.frequency_targets) - 1.0) > 1e-6:
            raise ValueError(f"frequency_targets must sum to 1, got {sum(self.frequency_targets)}")
        if min(self.frequency_targets) <= 0.0:
            raise ValueError("frequency_targets must all be positive")
        if self.frequency_targets[-1] >= 0.02:
            raise ValueError("rare class target frequency must stay below 2%")
        if not 0.0 <= self.rare_probability <= 1.0:
            raise ValueError(f"rare_probability must lie in [0, 1], got {self.rare_probability}")
        if self.noise_scale < 1:
            raise ValueError("noise_scale must be >= 1")

    @property
    def shift_enabled(self) -> bool:
        return bool(self.palette_rotation or self.gamma or self.noise_amplitude or self.texture_frequency)

    def to_dict(self):
        d = asdict(self)
        d['class_names'] = list(self.class_names)
        d['frequency_targets'] = list(self.frequency_targets)
        return d


@dataclass(frozen=True)
class SegmentationBatch:
    """
    Images N x 3 x H x W in [0, 1], optional N x H x W labels, domain tag.

    Arrays are made read-only so batches can cross threads safely.
    """
    images: np.ndarray
    labels: Optional[np.ndarray]
    domain: str
    seeds: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"Unknown domain: {self.domain}")
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise ValueError(f"images must be N x 3 x H x W, got {self.images.shape}")
        if self.labels is not None:
            n, _, h, w = self.images.shape
            if self.labels.shape != (n, h, w):
                raise ValueError(f"labels shape {self.labels.shape} does not match images {self.images.shape}")
            self.labels.setflags(write=False)
        self.images.setflags(write=False)

    @property
    def size(self) -> int:
        return self.images.shape[0]

    def to_dict(self):
        return {
            'domain': self.domain,
            'size': self.size,
            'height': self.images.shape[2],
            'width': self.images.shape[3],
            'labelled': self.labels is not None,
            'seeds': ','.join(str(s) for s in self.seeds),
        }
