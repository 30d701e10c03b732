"""Checkpoint container shared by every model kind.

A checkpoint is one JSON document with sorted keys. Arrays are stored as
base64 little-endian float64 with their shape, so a reload is bit-exact and two
runs with the same seed write byte-identical files.
"""
import base64
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .exceptions import CheckpointError, ConfigError
from .models import ModelConfig, RetrievalModel, build_model
from .numerics import Rng
from .text import EmbeddingTable
from .training import EpochLog, RmspropState
from .types import Blocks, Matrix

logger = logging.getLogger(__name__)

FORMAT = "tagsong-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    model: RetrievalModel
    state: Optional[RmspropState] = None
    epoch: int = 0
    history: List[EpochLog] = field(default_factory=list)
    seed: int = 0
    embedding_checksum: Optional[str] = None
    train_config: Dict[str, object] = field(default_factory=dict)


def encode_array(array: Matrix) -> dict:
    data = np.ascontiguousarray(array, dtype="<f8")
    return {"shape": list(data.shape), "data": base64.b64encode(data.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> Matrix:
    try:
        raw = base64.b64decode(obj["data"], validate=True)
        array = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        return array.reshape(tuple(obj["shape"]))
    except (KeyError, TypeError, ValueError) as ex:
        raise CheckpointError(f"corrupt array payload: {ex}") from None


def _encode_blocks(blocks: Blocks) -> dict:
    return {name: encode_array(value) for name, value in blocks.items()}


def checkpoint_to_json(checkpoint: Checkpoint) -> dict:
    model = checkpoint.model
    extra = model.extra_state()
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "config": model.config.to_json(),
        "seed": checkpoint.seed,
        "epoch": checkpoint.epoch,
        # wall-clock times stay in the training log
        "history": [{"epoch": log.epoch, "loss": log.loss} for log in checkpoint.history],
        "embedding_checksum": checkpoint.embedding_checksum,
        "train_config": checkpoint.train_config,
        "blocks": _encode_blocks(model.blocks()),
        "mood_vocab": extra.get("mood_vocab"),
        "bow_words": extra.get("bow_words"),
        "bow_idf": encode_array(extra["bow_idf"]) if "bow_idf" in extra else None,
        "optimizer": None,
    }
    state = checkpoint.state
    if state is not None:
        doc["optimizer"] = {
            "learning_rate": state.learning_rate,
            "rho": state.rho,
            "epsilon": state.epsilon,
            "accumulators": _encode_blocks(state.accumulators),
        }
    return doc


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> None:
    text = json.dumps(checkpoint_to_json(checkpoint), sort_keys=True, indent=1)
    with open(path, "w", encoding="utf-8") as file:
        file.write(text + "\n")
    logger.debug(f"Checkpoint written to {path}")


def _restore_blocks(target: Blocks, stored: dict, what: str) -> None:
    missing = sorted(set(target) - set(stored))
    extra = sorted(set(stored) - set(target))
    if missing or extra:
        raise CheckpointError(f"{what} blocks do not match the model (missing {missing}, unexpected {extra})")
    for name, param in target.items():
        value = decode_array(stored[name])
        if value.shape != param.shape:
            raise CheckpointError(f"{what} block '{name}' has shape {value.shape}, model expects {param.shape}")
        param[...] = value


def checkpoint_from_json(doc: dict, table: Optional[EmbeddingTable] = None) -> Checkpoint:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError("not a tagsong checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    try:
        config = ModelConfig.from_json(doc["config"])
    except (ConfigError, TypeError, KeyError) as ex:
        raise CheckpointError(f"invalid model configuration: {ex}") from None
    if config.kind != doc.get("kind"):
        raise CheckpointError(f"kind tag '{doc.get('kind')}' disagrees with configuration '{config.kind}'")

    checksum = doc.get("embedding_checksum")
    if table is not None and checksum is not None and checksum != table.checksum():
        logger.warning("Embedding table differs from the one this checkpoint was trained with")

    bow_vocab = None
    if config.kind == "bow":
        if doc.get("bow_words") is None or doc.get("bow_idf") is None:
            raise CheckpointError("bag-of-words checkpoint without its vocabulary")
        bow_vocab = ({word: n for n, word in enumerate(doc["bow_words"])}, decode_array(doc["bow_idf"]))
    mood_vocab = doc.get("mood_vocab") or {}

    model = build_model(config, Rng(0), mood_vocab=mood_vocab, bow_vocab=bow_vocab)
    _restore_blocks(model.blocks(), doc.get("blocks", {}), "parameter")

    state = None
    optimizer = doc.get("optimizer")
    if optimizer is not None:
        state = RmspropState.for_params(model.blocks(), optimizer["learning_rate"], optimizer["rho"], optimizer["epsilon"])
        _restore_blocks(state.accumulators, optimizer["accumulators"], "optimizer")

    history = [EpochLog(epoch=int(h["epoch"]), loss=float(h["loss"]), wallclock_ms=0.0) for h in doc.get("history", [])]
    return Checkpoint(
        model=model,
        state=state,
        epoch=int(doc.get("epoch", 0)),
        history=history,
        seed=int(doc.get("seed", 0)),
        embedding_checksum=checksum,
        train_config=dict(doc.get("train_config") or {}),
    )


def load_checkpoint(path: Union[str, Path], table: Optional[EmbeddingTable] = None) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as file:
            doc = json.load(file)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} does not exist") from None
    except json.JSONDecodeError as ex:
        raise CheckpointError(f"{path}: malformed checkpoint JSON at line {ex.lineno}") from None
    checkpoint = checkpoint_from_json(doc, table)
    logger.info(f"Loaded {checkpoint.model.kind} checkpoint from {path} (epoch {checkpoint.epoch})")
    return checkpoint
