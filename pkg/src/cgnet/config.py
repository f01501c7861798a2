"""Experiment configuration: per-dataset defaults, file parsing, overrides.

Config files are flat INI-style key-value text keyed by dataset section so
runs stay diffable. CLI flags override file values which override dataset
defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass

from .concepts import EPSILON, TAU
from .lens import ENTROPY_WEIGHT, TEMPERATURE
from .models import LAYER_KINDS, ModelConfig

SEEDS = (42, 19, 76, 58, 92)

MODEL_KINDS = ("cgn", "vanilla")

DATASETS = ("ba-shapes", "ba-community", "ba-grid", "tree-cycles", "tree-grid",
            "mutagenicity", "reddit-binary")

# architecture/training table plus the k / p / edit-distance-cap settings
DATASET_DEFAULTS = {
    "ba-shapes": dict(conv_count=4, hidden_units=10, concept_width=10,
                      learning_rate=0.001, epochs=7000,
                      baseline_k=10, representative_p=2, ged_cap=10),
    "ba-community": dict(conv_count=6, hidden_units=20, concept_width=20,
                         learning_rate=0.0001, epochs=10000,
                         baseline_k=30, representative_p=2, ged_cap=10),
    "ba-grid": dict(conv_count=4, hidden_units=10, concept_width=10,
                    learning_rate=0.001, epochs=3000,
                    baseline_k=10, representative_p=4, ged_cap=13),
    "tree-cycles": dict(conv_count=3, hidden_units=10, concept_width=10,
                        learning_rate=0.001, epochs=7000,
                        baseline_k=10, representative_p=4, ged_cap=12),
    "tree-grid": dict(conv_count=7, hidden_units=20, concept_width=20,
                      learning_rate=0.0001, epochs=20000,
                      baseline_k=10, representative_p=4, ged_cap=13),
    "mutagenicity": dict(conv_count=4, hidden_units=40, concept_width=10,
                         learning_rate=0.001, epochs=1000, batch_size=16,
                         baseline_k=30, representative_p=4, ged_cap=13),
    "reddit-binary": dict(conv_count=4, hidden_units=40, concept_width=10,
                          learning_rate=0.001, epochs=1000, batch_size=16,
                          baseline_k=30, representative_p=4, ged_cap=13,
                          subsample=500),
}


class ConfigError(ValueError):
    """Bad dataset id, unknown key, or out-of-range value in a config."""


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    model: str = "cgn"
    layer_kind: str = "gcn"
    conv_count: int = 4
    hidden_units: int = 10
    concept_width: int = 10
    learning_rate: float = 0.001
    epochs: int = 7000
    batch_size: int = 16
    tau: float = TAU
    epsilon: float = EPSILON
    len_temperature: float = TEMPERATURE
    len_entropy_weight: float = ENTROPY_WEIGHT
    baseline_k: int = 10
    representative_p: int = 2
    ged_cap: int = 10
    seeds: tuple = SEEDS
    data_seed: int = 0
    split_fraction: float = 0.8
    subsample: int = 0            # 0 means no cap; reddit defaults to 500
    out_dir: str = ""

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}")
        if self.layer_kind not in LAYER_KINDS:
            raise ConfigError(f"layer_kind must be one of {LAYER_KINDS}")
        for key in ("conv_count", "hidden_units", "concept_width", "epochs",
                    "batch_size", "baseline_k", "ged_cap"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.len_temperature <= 0:
            raise ConfigError("len_temperature must be positive")
        if self.representative_p < 0:
            raise ConfigError("representative_p must be >= 0")
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.subsample < 0:
            raise ConfigError("subsample must be >= 0")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ConfigError("need at least one seed")
        object.__setattr__(self, "seeds", seeds)

    def model_config(self, seed) -> ModelConfig:
        return ModelConfig(layer_kind=self.layer_kind,
                           conv_count=self.conv_count,
                           hidden_units=self.hidden_units,
                           concept_width=self.concept_width,
                           learning_rate=self.learning_rate,
                           epochs=self.epochs,
                           batch_size=self.batch_size,
                           seed=seed,
                           len_temperature=self.len_temperature,
                           len_entropy_weight=self.len_entropy_weight)


def default_config(dataset, **overrides) -> RunConfig:
    if dataset not in DATASETS:
        raise ConfigError(f"unknown dataset {dataset!r}")
    fields = dict(DATASET_DEFAULTS[dataset])
    fields.update(overrides)
    return replace_fields(RunConfig(dataset=dataset), fields)


def replace_fields(cfg: RunConfig, overrides) -> RunConfig:
    """Apply a field -> value mapping; unknown names are config errors."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    bad = set(overrides) - known
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    try:
        return dataclasses.replace(cfg, **overrides)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key, raw):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if key == "seeds":
            return tuple(int(part) for part in raw.split(",") if part.strip())
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def render_config(cfg: RunConfig) -> str:
    """One dataset-keyed section; floats use repr so parsing round-trips."""
    lines = [f"[{cfg.dataset}]"]
    for field in dataclasses.fields(RunConfig):
        if field.name == "dataset":
            continue
        value = getattr(cfg, field.name)
        if field.name == "seeds":
            value = ", ".join(str(s) for s in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{field.name} = {value}")
    return "\n".join(lines) + "\n"


def parse_config(text) -> dict:
    """Parse dataset-keyed sections into {dataset: RunConfig}.

    Each section starts from that dataset's defaults; present keys override.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in DATASETS:
            raise ConfigError(f"unknown dataset section {section!r}")
        overrides = {}
        for key, raw in parser.items(section):
            if key == "dataset" or key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key {key!r} in [{section}]")
            overrides[key] = _parse_value(key, raw)
        out[section] = default_config(section, **overrides)
    return out


def load_config_file(path) -> dict:
    with io.open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
