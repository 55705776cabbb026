"""
Training hyperparameters.

Dataclass defaults follow the published optimizer, loss and percentile
settings; the shipped config.yaml overrides them with a desk-scale profile.
Every field maps to a dotted config key `<section>.<field>`.
"""

import hashlib
import json
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Any, Dict, List, Tuple

from models.scene import SceneConfig


class ConfigError(ValueError):
    """Unknown config key, wrongly typed value or inconsistent switches."""


THRESHOLD_MODES = ("adaptive", "fixed", "none")
CLASS_WEIGHT_MODES = ("inverse", "proportional")
SPLITS = ("train", "val", "test")


@dataclass
class RunSettings:
    name: str = "run"
    seed: int = 0
    output_dir: str = "runs"
    debug: bool = False


@dataclass
class ModelSettings:
    base_width: int = 16
    generator_slope: float = 0.2
    leaky_slope: float = 0.2
    d1_channels: Tuple[int, ...] = (64, 64, 128, 128, 1)
    d2_channels: Tuple[int, ...] = (48, 48, 96, 96, 1)


@dataclass
class OptimSettings:
    g_lr: float = 1e-4
    g_lr_end: float = 1e-6
    d1_lr: float = 1e-4
    d1_lr_end: float = 1e-6
    d2_lr: float = 1e-4
    d2_lr_end: float = 1e-6
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class LossWeights:
    """Weights of the generator's adversarial and self-training terms."""
    w1_s: float = 1e-2
    w1_t: float = 1e-3
    w2_t: float = 1e-2
    w3: float = 1e-1

    def validate(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"loss weight {name} must be >= 0, got {value}")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossSettings(LossWeights):
    eps: float = 1e-10
    ignore_index: int = 255

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w1_s, self.w1_t, self.w2_t, self.w3)


@dataclass
class SelfTrainSettings:
    f: float = 75.0
    min_pixels: int = 8
    init_threshold: float = 1.0
    threshold_mode: str = "adaptive"
    fixed_threshold: float = 0.2
    class_weight_mode: str = "inverse"
    class_weight_samples: int = 64


@dataclass
class TrainSettings:
    iterations: int = 2000
    batch_size: int = 1
    eval_interval: int = 250
    checkpoint_interval: int = 500
    use_g1_s: bool = True
    use_g1_t: bool = True
    use_g2: bool = True
    use_g3: bool = True


@dataclass
class EvalSettings:
    split: str = "val"
    samples: int = 500
    batch_size: int = 8
    workers: int = 1


@dataclass
class AblationSettings:
    seeds: Tuple[int, ...] = (0, 1, 2)


@dataclass
class LoggingSettings:
    level: str = "INFO"
    log_interval: int = 50
    show_progress: bool = True


SECTIONS = {
    'run': RunSettings,
    'data': SceneConfig,
    'model': ModelSettings,
    'optim': OptimSettings,
    'loss': LossSettings,
    'selftrain': SelfTrainSettings,
    'train': TrainSettings,
    'eval': EvalSettings,
    'ablation': AblationSettings,
    'logging': LoggingSettings,
}

# Keys that do not change what a run computes.
UNHASHED_KEYS = ("run.name", "run.output_dir")


@dataclass
class TrainConfig:
    """All settings of one training run, grouped by config section."""
    run: RunSettings = field(default_factory=RunSettings)
    data: SceneConfig = field(default_factory=SceneConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    optim: OptimSettings = field(default_factory=OptimSettings)
    loss: LossSettings = field(default_factory=LossSettings)
    selftrain: SelfTrainSettings = field(default_factory=SelfTrainSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    ablation: AblationSettings = field(default_factory=AblationSettings)
    logging: LoggingSettings = field(default_factory=LoggingSettings)

    # ----------------------------
    # Flat view
    # ----------------------------
    def to_flat(self) -> Dict[str, Any]:
        flat = {}
        for section in SECTIONS:
            group = getattr(self, section)
            for f in fields(group):
                value = getattr(group, f.name)
                flat[f"{section}.{f.name}"] = list(value) if isinstance(value, tuple) else value
        return flat

    @classmethod
    def from_flat(cls, flat: Dict[str, Any]) -> "TrainConfig":
        cfg = cls()
        return cfg.with_overrides(flat)

    def with_overrides(self, overrides: Dict[str, Any]) -> "TrainConfig":
        """Copy with dotted-key overrides applied and type-checked."""
        grouped: Dict[str, Dict[str, Any]] = {}
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in SECTIONS or not name:
                raise ConfigError(f"Unknown config key: {key}")
            group = getattr(self, section)
            known = {f.name for f in fields(group)}
            if name not in known:
                raise ConfigError(f"Unknown config key: {key}")
            grouped.setdefault(section, {})[name] = _coerce(key, getattr(group, name), value)

        updated = {section: replace(getattr(self, section), **values)
                   for section, values in grouped.items()}
        return replace(self, **updated)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        nested: Dict[str, Dict[str, Any]] = {}
        for key, value in self.to_flat().items():
            section, name = key.split(".", 1)
            nested.setdefault(section, {})[name] = value
        return nested

    def config_hash(self) -> str:
        flat = {k: v for k, v in self.to_flat().items() if k not in UNHASHED_KEYS}
        canonical = json.dumps(flat, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    # ----------------------------
    # Checks
    # ----------------------------
    def validate(self) -> "TrainConfig":
        try:
            self.data.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        self.loss.weights.validate()

        st = self.selftrain
        if not 0.0 < st.f <= 100.0:
            raise ConfigError(f"selftrain.f must lie in (0, 100], got {st.f}")
        if st.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"selftrain.threshold_mode must be one of {THRESHOLD_MODES}")
        if st.class_weight_mode not in CLASS_WEIGHT_MODES:
            raise ConfigError(f"selftrain.class_weight_mode must be one of {CLASS_WEIGHT_MODES}")
        for name in ("init_threshold", "fixed_threshold"):
            if not 0.0 <= getattr(st, name) <= 1.0:
                raise ConfigError(f"selftrain.{name} must lie in [0, 1]")
        if st.min_pixels < 1 or st.class_weight_samples < 1:
            raise ConfigError("selftrain.min_pixels and class_weight_samples must be >= 1")

        for name in ("d1_channels", "d2_channels"):
            channels = getattr(self.model, name)
            if len(channels) != 5 or channels[-1] != 1:
                raise ConfigError(f"model.{name} needs 5 entries ending in 1, got {list(channels)}")

        o = self.optim
        for prefix in ("g", "d1", "d2"):
            lr, lr_end = getattr(o, f"{prefix}_lr"), getattr(o, f"{prefix}_lr_end")
            if lr <= 0 or lr_end < 0 or lr_end > lr:
                raise ConfigError(f"optim.{prefix}_lr_end must lie in [0, {prefix}_lr]")

        t = self.train
        if t.iterations < 0 or t.batch_size < 1:
            raise ConfigError("train.iterations must be >= 0 and train.batch_size >= 1")
        if t.eval_interval < 1 or t.checkpoint_interval < 0 or self.logging.log_interval < 1:
            raise ConfigError("train.eval_interval and logging.log_interval must be >= 1, "
                              "train.checkpoint_interval >= 0")
        if self.eval.split not in SPLITS:
            raise ConfigError(f"eval.split must be one of {SPLITS}")
        if self.eval.samples < 1 or self.eval.workers < 1 or self.eval.batch_size < 1:
            raise ConfigError("eval.samples, eval.batch_size and eval.workers must be >= 1")
        if not self.ablation.seeds:
            raise ConfigError("ablation.seeds must not be empty")
        return self

    @property
    def needs_d1(self) -> bool:
        t = self.train
        return t.use_g1_s or t.use_g1_t or (t.use_g3 and self.selftrain.threshold_mode != "none")

    @property
    def needs_d2(self) -> bool:
        return self.train.use_g2


def _coerce(key: str, default: Any, value: Any) -> Any:
    """Match `value` to the type of the field default."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} expects a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(f"{key} expects an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            # PyYAML reads "1e-4" (no dot) as a string
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(f"{key} expects a number, got {value!r}")
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ConfigError(f"{key} expects a string, got {value!r}")
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} expects a list, got {value!r}")
        if default:
            return tuple(_coerce(key, default[0], v) for v in value)
        return tuple(value)
    return value
