"""
config.py

Project paths and run-configuration loading.

A config file is either nested YAML (`loss: {w1_s: 0.01}`) or flat
`key = value` lines with dotted keys (`loss.w1_s = 0.01`); both resolve to
the same dotted keys. Values and `--override key=value` strings are parsed
with yaml.safe_load, then type-checked against the TrainConfig defaults.
"""

from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import yaml

from models.training import ConfigError, TrainConfig

# Project root directory (parent of src/)
PROJECT_ROOT = Path(__file__).resolve().parent.parent

DEFAULT_CONFIG = PROJECT_ROOT / "src" / "config.yaml"


def flatten(nested: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    """{'loss': {'w1_s': 0.01}} -> {'loss.w1_s': 0.01}"""
    flat = {}
    for key, value in nested.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def parse_override(text: str) -> Tuple[str, Any]:
    """'loss.w3=0.05' -> ('loss.w3', 0.05)"""
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"Override must look like key=value, got {text!r}")
    try:
        value = yaml.safe_load(raw.strip()) if raw.strip() else ""
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse value of override {text!r}: {e}") from e
    return key, value


def _read_flat_lines(text: str, path: Path) -> Dict[str, Any]:
    flat = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected `key = value`, got {line!r}")
        key, value = parse_override(line)
        flat[key] = value
    return flat


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Dotted-key dict from a YAML or flat key = value file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        try:
            nested = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}") from e
        if not isinstance(nested, dict):
            raise ConfigError(f"{path} must contain a mapping")
        return flatten(nested)
    return _read_flat_lines(text, path)


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Iterable[str] = ()) -> TrainConfig:
    """
    Build a validated TrainConfig.

    Args:
        path: Config file; None uses only the dataclass defaults
        overrides: `key=value` strings applied after the file
    """
    flat = read_config_file(path) if path is not None else {}
    for text in overrides:
        key, value = parse_override(text)
        flat[key] = value
    return TrainConfig.from_flat(flat).validate()


def resolve_run_dir(cfg: TrainConfig) -> Path:
    """run.output_dir/run.name; relative output dirs live under the project root."""
    output = Path(cfg.run.output_dir)
    if not output.is_absolute():
        output = PROJECT_ROOT / output
    return output / cfg.run.name
