"""Configuration objects and the flat ``key = value`` config file format.

Every hyperparameter of the published configuration has a same-named key
whose default is the published value; presets only override what they must.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

SAMPLE_RATE = 16000

#: Variant axes: speaker identity source x prosodic conditioning.
SPEAKER_MODES = ("onehot", "encoder")
VARIANTS = (
    "onehot_f0uv",
    "onehot_nof0uv",
    "encoder_f0uv",
    "encoder_nof0uv",
)


def split_variant(variant: str) -> tuple[str, bool]:
    """Return (speaker_mode, use_f0uv) for a variant name like ``encoder_f0uv``."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    mode, prosody = variant.rsplit("_", 1)
    return mode, prosody == "f0uv"


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    The defaults reproduce the published configuration: 16 kHz speech,
    8-bit mu-law codes, two frame-level recurrent tiers with upsampling
    ratios (4, 20), a 13-step top tier consuming 80-sample frames, GRU
    hidden size 1024, 100-dim speaker embeddings and a 50-dim global
    conditioning vector built from one affine map.
    """

    sample_rate: int = SAMPLE_RATE
    quantization_levels: int = 256
    frame_size: int = 80                     # samples per top-tier step (Delta t)
    seq_len: int = 13                        # top-tier steps per training window
    upsampling_ratios: tuple[int, int] = (4, 20)
    gru_hidden_size: int = 1024
    speaker_embedding_size: int = 100        # E
    global_size: int = 50                    # C
    categorical_embedding_size: int = 15
    ar_order: int = 20                       # sample-level autoregressive order
    code_embedding_size: int = 256
    mlp_hidden_size: int = 1024
    activation: str = "relu"                 # sample-level MLP activation
    dtype: str = "float32"

    def __post_init__(self):
        r_top, r_mid = self.upsampling_ratios
        if r_top * r_mid != self.frame_size:
            raise ConfigError(
                f"frame_size {self.frame_size} must equal the product of the "
                f"upsampling ratios {self.upsampling_ratios}"
            )
        if self.ar_order != r_mid:
            raise ConfigError("ar_order must equal the mid-tier frame size")
        for name in ("frame_size", "seq_len", "gru_hidden_size",
                     "speaker_embedding_size", "global_size",
                     "categorical_embedding_size", "quantization_levels",
                     "code_embedding_size", "mlp_hidden_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def mid_frame_size(self) -> int:
        return self.frame_size // self.upsampling_ratios[0]

    @property
    def window_samples(self) -> int:
        """Samples per training window: seq_len x frame_size (1040 by default)."""
        return self.seq_len * self.frame_size


@dataclass
class TrainConfig:
    """Optimization hyperparameters (Adam with defaults except the learning rate)."""

    batch_size: int = 128
    initial_learning_rate: float = 1e-4
    learning_rate_patience: int = 3
    learning_rate_scaling_factor: float = 0.5
    epochs: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    min_improvement: float = 1e-4            # validation NLL decrease that counts
    seed: int = 0
    variant: str = "encoder_nof0uv"

    @property
    def speaker_mode(self) -> str:
        return split_variant(self.variant)[0]

    @property
    def use_f0uv(self) -> bool:
        return split_variant(self.variant)[1]


@dataclass
class FeatureColumn:
    name: str
    kind: str                                # "categorical" | "numeric"
    cardinality: int = 0                     # categorical only

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        if self.kind == "categorical" and self.cardinality <= 0:
            raise ConfigError(f"categorical feature {self.name} needs a cardinality")


@dataclass
class FeatureSchema:
    """Declares the per-phone label features and which of them are categorical.

    The label file carries ``len(columns)`` feature fields per phone (53 in
    the published setup).  Categorical columns hold integer category ids that
    the model embeds; numeric columns are z-normalized per speaker.  Derived
    columns (absolute/relative duration, log-F0, voicing flag) are appended
    by the conditioning pipeline, not declared here.
    """

    columns: list[FeatureColumn] = field(default_factory=list)
    time_unit: str = "seconds"               # "seconds" | "htk" (100 ns)

    def __post_init__(self):
        if self.time_unit not in ("seconds", "htk"):
            raise ConfigError(f"unknown time_unit {self.time_unit!r}")

    @property
    def n_features(self) -> int:
        return len(self.columns)

    @property
    def categorical_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind == "categorical"]

    @property
    def numeric_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind == "numeric"]

    @property
    def cardinalities(self) -> list[int]:
        return [c.cardinality for c in self.columns if c.kind == "categorical"]

    def to_dict(self) -> dict:
        return {
            "time_unit": self.time_unit,
            "columns": [dataclasses.asdict(c) for c in self.columns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        cols = [FeatureColumn(**c) for c in d["columns"]]
        return cls(columns=cols, time_unit=d.get("time_unit", "seconds"))


def load_feature_schema(path) -> FeatureSchema:
    """Read a feature schema from a JSON file (see FeatureSchema.to_dict)."""
    import json
    try:
        return FeatureSchema.from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a feature schema ({exc})") from exc


def save_feature_schema(path, schema: FeatureSchema) -> None:
    import json
    Path(path).write_text(json.dumps(schema.to_dict(), indent=1))


def default_feature_schema(phone_inventory_size: int = 64) -> FeatureSchema:
    """The stock 53-feature schema: a 5-slot quinphone context (categorical)
    plus 48 opaque numeric question answers."""
    cols = [
        FeatureColumn(f"quinphone_{i}", "categorical", phone_inventory_size)
        for i in range(5)
    ]
    cols += [FeatureColumn(f"ling_{i:02d}", "numeric") for i in range(48)]
    return FeatureSchema(columns=cols)


def desk_scale(model: ModelConfig | None = None,
               train: TrainConfig | None = None) -> tuple[ModelConfig, TrainConfig]:
    """Shrink the published configuration so the full pipeline runs on a desk:
    hidden size 64, small code embeddings, batch 32, 5 epochs."""
    model = model or ModelConfig()
    train = train or TrainConfig()
    model = dataclasses.replace(
        model,
        gru_hidden_size=64,
        code_embedding_size=16,
        mlp_hidden_size=64,
        categorical_embedding_size=4,
    )
    train = dataclasses.replace(train, batch_size=32, epochs=5)
    return model, train


# -- flat key = value config files -------------------------------------------

_BOOL = {"true": True, "false": False}


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.lower() in _BOOL:
        return _BOOL[raw.lower()]
    if "," in raw:
        return tuple(_parse_value(p) for p in raw.split(","))
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def read_kv_file(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        out[key.strip()] = _parse_value(raw)
    return out


def write_kv_file(path, values: dict) -> None:
    lines = []
    for key, val in values.items():
        if isinstance(val, (tuple, list)):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key} = {val}")
    Path(path).write_text("\n".join(lines) + "\n")


def configs_from_kv(values: dict) -> tuple[ModelConfig, TrainConfig]:
    """Build (ModelConfig, TrainConfig) from a flat mapping, rejecting unknown keys."""
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    model_kw, train_kw = {}, {}
    for key, val in values.items():
        if key in model_fields:
            model_kw[key] = val
        elif key in train_fields:
            train_kw[key] = val
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return ModelConfig(**model_kw), TrainConfig(**train_kw)


def configs_to_kv(model: ModelConfig, train: TrainConfig) -> dict:
    out = dataclasses.asdict(model)
    out.update(dataclasses.asdict(train))
    return out
