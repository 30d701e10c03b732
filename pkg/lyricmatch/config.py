import configparser
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Dict, Optional, Tuple

from tagsong.const import (
    DEFAULT_ATTENTION,
    DEFAULT_BATCH,
    DEFAULT_BOW_VOCAB,
    DEFAULT_CLIP_NORM,
    DEFAULT_EPSILON,
    DEFAULT_HIDDEN,
    DEFAULT_K_TAGS,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MAX_LEN,
    DEFAULT_MLP_HIDDEN,
    DEFAULT_RHO,
    EMBEDDING_DIM,
    N_ATTRIBUTES,
    N_OBJECTS,
)
from tagsong.dataset import TagLayout
from tagsong.exceptions import ConfigError
from tagsong.models import ModelConfig
from tagsong.training import TrainConfig
from tagsong.types import DIRECTIONS, LOSS_KINDS, MODEL_KINDS, POOLINGS, SPLIT_MODES, TAG_GROUPS

from .display import CustomRichHandler, console

DEFAULT_LOGGING_CONF = {
    "level": "INFO",
    "datefmt": "[%X]",
}


def setup_logging(config):
    """
    Configure the logging system using Rich for console output.
    """
    if "Logging" in config:
        log_config = config["Logging"]
    else:
        log_config = DEFAULT_LOGGING_CONF

    level_name = log_config.get("level", "INFO").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        raise ConfigError(f"Configuration Error: unknown logging level '{level_name}'")

    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[
            CustomRichHandler(
                console=console,
                level=level,
                show_time=True,
                show_path=False,
                log_time_format=log_config.get("datefmt", "[%X]"),
            )
        ],
        force=True,
    )


def optional_int(value: str) -> Optional[int]:
    value = value.strip().lower()
    if value in ("", "all", "none"):
        return None
    number = int(value)
    if number < 1:
        raise ValueError(f"expected a positive count or 'all', got {number}")
    return number


def _optional_float(value: str) -> Optional[float]:
    value = value.strip().lower()
    if value in ("", "none", "off"):
        return None
    return float(value)


def _int_tuple(value: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in value.replace(" ", "").split(",") if part)


def _bool(value: str) -> bool:
    value = value.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: '{value}'")


def _optional_str(value: str) -> Optional[str]:
    value = value.strip()
    return value or None


# RunConfig field -> (ini section, ini key, parser)
INI_FIELDS: Dict[str, Tuple[str, str, Callable[[str], Any]]] = {
    "triplets": ("Paths", "triplets", _optional_str),
    "embeddings": ("Paths", "embeddings", _optional_str),
    "tag_names": ("Paths", "tag_names", _optional_str),
    "split": ("Paths", "split", _optional_str),
    "checkpoint": ("Paths", "checkpoint", _optional_str),
    "output_dir": ("Paths", "output_dir", str.strip),
    "n_objects": ("Tags", "objects", int),
    "n_attributes": ("Tags", "attributes", int),
    "model": ("Model", "model", str.strip),
    "hidden_size": ("Model", "hidden_size", int),
    "attention_size": ("Model", "attention_size", int),
    "mlp_hidden": ("Model", "mlp_hidden", _int_tuple),
    "k_tags": ("Model", "k_tags", int),
    "pooling": ("Model", "pooling", str.strip),
    "tag_group": ("Model", "tag_group", _optional_str),
    "share_attention": ("Model", "share_attention", _bool),
    "max_len": ("Model", "max_len", int),
    "embedding_dim": ("Model", "embedding_dim", int),
    "bow_vocab": ("Model", "bow_vocab", int),
    "loss": ("Training", "loss", str.strip),
    "batch": ("Training", "batch", int),
    "epochs": ("Training", "epochs", int),
    "seed": ("Training", "seed", int),
    "learning_rate": ("Training", "learning_rate", float),
    "rho": ("Training", "rho", float),
    "epsilon": ("Training", "epsilon", float),
    "clip_norm": ("Training", "clip_norm", _optional_float),
    "mode": ("Dataset", "mode", str.strip),
    "min_occurrence": ("Dataset", "min_occurrence", int),
    "per_song": ("Dataset", "per_song", optional_int),
    "test_songs": ("Dataset", "test_songs", int),
    "min_favorites": ("Dataset", "min_favorites", int),
    "recall_ks": ("Evaluation", "recall_ks", _int_tuple),
    "top_n": ("Evaluation", "top_n", int),
    "direction": ("Evaluation", "direction", _optional_str),
}

ENUMERATED = {
    "model": MODEL_KINDS,
    "pooling": POOLINGS,
    "tag_group": TAG_GROUPS,
    "loss": LOSS_KINDS,
    "mode": SPLIT_MODES,
    "direction": DIRECTIONS,
}

KNOWN_SECTIONS = {section for section, _, _ in INI_FIELDS.values()} | {"Logging"}


@dataclass(frozen=True)
class RunConfig:
    """Every setting a command needs, after merging flags, ``config.ini`` and defaults."""

    triplets: Optional[str] = None
    embeddings: Optional[str] = None
    tag_names: Optional[str] = None
    split: Optional[str] = None
    checkpoint: Optional[str] = None
    output_dir: str = "output"
    n_objects: int = N_OBJECTS
    n_attributes: int = N_ATTRIBUTES
    model: str = "ours"
    hidden_size: int = DEFAULT_HIDDEN
    attention_size: int = DEFAULT_ATTENTION
    mlp_hidden: Tuple[int, ...] = (DEFAULT_MLP_HIDDEN,)
    k_tags: int = DEFAULT_K_TAGS
    pooling: str = "average"
    # None: "obj-attr" when training, the checkpoint's own group when evaluating
    tag_group: Optional[str] = None
    share_attention: bool = False
    max_len: int = DEFAULT_MAX_LEN
    embedding_dim: int = EMBEDDING_DIM
    bow_vocab: int = DEFAULT_BOW_VOCAB
    loss: str = "mse"
    batch: int = DEFAULT_BATCH
    epochs: int = 1
    seed: int = 0
    learning_rate: float = DEFAULT_LEARNING_RATE
    rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON
    clip_norm: Optional[float] = DEFAULT_CLIP_NORM
    mode: str = "dagger"
    min_occurrence: int = 5
    per_song: Optional[int] = 5
    test_songs: int = 100
    min_favorites: int = 1
    recall_ks: Tuple[int, ...] = ()
    top_n: int = 10
    # None: both directions
    direction: Optional[str] = None

    def __post_init__(self):
        for name, allowed in ENUMERATED.items():
            value = getattr(self, name)
            if value is not None and value not in allowed:
                raise ConfigError(f"Configuration Error: '{value}' is not a valid {name} (choose from {', '.join(allowed)})")
        for name in ("hidden_size", "attention_size", "k_tags", "max_len", "embedding_dim", "bow_vocab", "batch", "top_n"):
            if getattr(self, name) < 1:
                raise ConfigError(f"Configuration Error: {name} must be at least 1")
        if self.epochs < 0 or self.seed < 0:
            raise ConfigError("Configuration Error: epochs and seed must be non-negative")

    @property
    def layout(self) -> TagLayout:
        return TagLayout(self.n_objects, self.n_attributes)

    @property
    def directions(self) -> Tuple[str, ...]:
        return (self.direction,) if self.direction else DIRECTIONS

    def model_config(self, kind: Optional[str] = None, tag_group: Optional[str] = None) -> ModelConfig:
        return ModelConfig(
            kind=kind or self.model,
            tag_group=tag_group or self.tag_group or "obj-attr",
            hidden_size=self.hidden_size,
            attention_size=self.attention_size,
            mlp_hidden=self.mlp_hidden,
            k_tags=self.k_tags,
            pooling=self.pooling,
            share_attention=self.share_attention,
            embedding_dim=self.embedding_dim,
            max_len=self.max_len,
            bow_vocab=self.bow_vocab,
            n_objects=self.n_objects,
            n_attributes=self.n_attributes,
        )

    def train_config(self, loss: Optional[str] = None) -> TrainConfig:
        return TrainConfig(
            loss=loss or self.loss,
            batch_size=self.batch,
            epochs=self.epochs,
            seed=self.seed,
            learning_rate=self.learning_rate,
            rho=self.rho,
            epsilon=self.epsilon,
            clip_norm=self.clip_norm,
        )

    def require(self, *names: str) -> None:
        """Raise ``ConfigError`` naming the first unset path."""
        for name in names:
            if not getattr(self, name):
                flag = "--" + name.replace("_", "-")
                raise ConfigError(f"Configuration Error: no {name} given (use {flag} or set it in [{INI_FIELDS[name][0]}])")


def validate_config(config: configparser.ConfigParser) -> None:
    """
    Validate the sections and enumerated values of a loaded config file.
    """
    for section in config.sections():
        if section not in KNOWN_SECTIONS:
            raise ConfigError(f"Configuration Error: unknown section '[{section}]'")
    for name, (section, key, parse) in INI_FIELDS.items():
        if section in config and key in config[section]:
            raw = config[section][key]
            try:
                value = parse(raw)
            except ValueError:
                raise ConfigError(f"Configuration Error: invalid value '{raw}' for '{key}' in section '{section}'") from None
            allowed = ENUMERATED.get(name)
            if allowed and value is not None and value not in allowed:
                raise ConfigError(f"Configuration Error: '{value}' is not a valid '{key}' in section '{section}' (choose from {', '.join(allowed)})")


def resolve_run_config(config: configparser.ConfigParser, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults, then ``config.ini``, then command-line flags (``None`` means not given)."""
    values: Dict[str, Any] = {}
    for name, (section, key, parse) in INI_FIELDS.items():
        if section in config and key in config[section]:
            values[name] = parse(config[section][key])
    names = {f.name for f in fields(RunConfig)}
    for name, value in (overrides or {}).items():
        if name in names and value is not None:
            values[name] = tuple(value) if isinstance(value, list) else value
    return replace(RunConfig(), **values)


@dataclass
class Context:
    """
    Application context to hold shared state across the application.
    """

    config: configparser.ConfigParser
    run: RunConfig
    config_dir: str = "."
    stats: Optional[Dict[str, Any]] = field(default_factory=dict)
