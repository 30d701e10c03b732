import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .const import DEFAULT_BATCH, DEFAULT_CLIP_NORM, DEFAULT_EPSILON, DEFAULT_LEARNING_RATE, DEFAULT_RHO
from .exceptions import NumericError, ParameterError, ShapeError
from .numerics import Rng, clip_by_global_norm, zeros_like_blocks
from .types import LOSS_KINDS, Blocks, LossKind, Vector

logger = logging.getLogger(__name__)


# Losses


def _check_pair(v: Vector, other: Vector) -> None:
    if v.shape != other.shape:
        raise ShapeError(f"vector shapes differ: {v.shape} vs {other.shape}")


def mse_loss(v: Vector, l_tilde: Vector) -> Tuple[float, Vector]:
    """Squared L2 distance between an image tag vector and a projected lyric."""
    _check_pair(v, l_tilde)
    diff = l_tilde - v
    return float(diff @ diff), 2.0 * diff


def cosine_with_grad(a: Vector, b: Vector) -> Tuple[float, Vector]:
    """cos(a, b) and its gradient with respect to ``b``."""
    _check_pair(a, b)
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise NumericError("cosine of a zero-norm vector")
    cos = float(a @ b) / (norm_a * norm_b)
    return cos, a / (norm_a * norm_b) - cos * b / (norm_b * norm_b)


def cosine_loss(v: Vector, l_tilde: Vector) -> Tuple[float, Vector]:
    cos, d_cos = cosine_with_grad(v, l_tilde)
    return -cos, -d_cos


def margin_loss(v: Vector, l_pos: Vector, l_neg: Vector) -> Tuple[float, Tuple[Vector, Vector]]:
    """Hinge ``max(0, 1 + cos(v, l_neg) - cos(v, l_pos))`` with gradients for ``l_pos`` and ``l_neg``."""
    cos_pos, d_pos = cosine_with_grad(v, l_pos)
    cos_neg, d_neg = cosine_with_grad(v, l_neg)
    loss = 1.0 + cos_neg - cos_pos
    if loss <= 0.0:
        return 0.0, (np.zeros_like(l_pos), np.zeros_like(l_neg))
    return loss, (-d_pos, d_neg)


def margin_score_loss(score_pos: float, score_neg: float) -> Tuple[float, Tuple[float, float]]:
    """Same hinge over raw relevance scores, for models that score pairs directly."""
    loss = 1.0 + score_neg - score_pos
    if loss <= 0.0:
        return 0.0, (0.0, 0.0)
    return loss, (-1.0, 1.0)


# RMSprop


@dataclass
class RmspropState:
    accumulators: Blocks
    learning_rate: float = DEFAULT_LEARNING_RATE
    rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON

    @classmethod
    def for_params(cls, params: Blocks, learning_rate=DEFAULT_LEARNING_RATE, rho=DEFAULT_RHO, epsilon=DEFAULT_EPSILON):
        return cls(accumulators=zeros_like_blocks(params), learning_rate=learning_rate, rho=rho, epsilon=epsilon)


def rmsprop_step(state: RmspropState, params: Blocks, grads: Blocks) -> Blocks:
    """``acc <- rho*acc + (1-rho)*g^2``; ``theta <- theta - lr*g/(sqrt(acc)+eps)``, in place."""
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for '{name}' has shape {grad.shape}, parameter {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        acc = state.accumulators.setdefault(name, np.zeros_like(param))
        acc *= state.rho
        acc += (1.0 - state.rho) * grad * grad
        param -= state.learning_rate * grad / (np.sqrt(acc) + state.epsilon)
    return params


# Training loop


@dataclass
class TrainConfig:
    loss: LossKind = "mse"
    batch_size: int = DEFAULT_BATCH
    epochs: int = 1
    seed: int = 0
    learning_rate: float = DEFAULT_LEARNING_RATE
    rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON
    clip_norm: Optional[float] = DEFAULT_CLIP_NORM

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError(f"batch size must be at least 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be non-negative, got {self.epochs}")
        if self.loss not in LOSS_KINDS:
            raise ParameterError(f"unknown loss '{self.loss}'")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    wallclock_ms: float


@dataclass
class TrainResult:
    history: List[EpochLog] = field(default_factory=list)
    state: Optional[RmspropState] = None

    @property
    def final_loss(self) -> Optional[float]:
        return self.history[-1].loss if self.history else None


def _add_into(total: Blocks, grads: Blocks) -> None:
    for name, value in grads.items():
        if name in total:
            total[name] += value
        else:
            total[name] = value.copy()


def train(
    pairs: Sequence,
    config: TrainConfig,
    model,
    state: Optional[RmspropState] = None,
    start_epoch: int = 0,
    history: Optional[List[EpochLog]] = None,
    on_epoch: Optional[Callable[[EpochLog], None]] = None,
) -> TrainResult:
    """Mini-batch RMSprop over ``pairs`` (``TrainingPair`` items) for ``config.epochs`` epochs.

    The batch objective is the sum of per-pair losses. Epoch ``e`` shuffles with
    the stream ``Rng(seed).child(e)`` and draws margin-loss negatives from
    ``Rng(seed).child(e, 1)``, so a resumed run replays exactly the epochs an
    uninterrupted run would have.
    """
    if not pairs:
        raise ParameterError("cannot train on an empty dataset")
    params = model.blocks()
    if state is None:
        state = RmspropState.for_params(params, config.learning_rate, config.rho, config.epsilon)
    result = TrainResult(history=list(history or []), state=state)
    root = Rng(config.seed)
    sampler = NegativeSampler(pairs) if config.loss == "mrl" or model.scoring else None

    for epoch in range(start_epoch, start_epoch + config.epochs):
        started = time.perf_counter()
        order = root.child(epoch).permutation(len(pairs))
        neg_rng = root.child(epoch, 1)
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [pairs[n] for n in order[start:start + config.batch_size]]
            try:
                batch_loss, grads = batch_loss_and_grads(model, batch, config.loss, sampler, neg_rng)
                clip_by_global_norm(grads, config.clip_norm)
                rmsprop_step(state, params, grads)
            except NumericError as ex:
                raise NumericError(f"epoch {epoch + 1}, batch {batch_no + 1}: {ex}") from ex
            epoch_loss += batch_loss
        log = EpochLog(epoch=epoch + 1, loss=epoch_loss, wallclock_ms=(time.perf_counter() - started) * 1000.0)
        result.history.append(log)
        logger.debug(f"epoch {log.epoch} loss {log.loss:.6f}")
        if on_epoch is not None:
            on_epoch(log)
    return result


class NegativeSampler:
    """Draws, for a positive pair, the lyric of a uniformly chosen different training song."""

    def __init__(self, pairs: Sequence):
        self.songs: Dict[str, object] = {}
        for pair in pairs:
            self.songs.setdefault(pair.lyric.song_id, pair)
        self.song_ids = sorted(self.songs)
        if len(self.song_ids) < 2:
            raise ParameterError("margin ranking needs lyrics of at least two songs")

    def draw(self, pair, rng: Rng):
        n = rng.integers(len(self.song_ids) - 1)
        # skip over the positive song
        if self.song_ids[n] >= pair.lyric.song_id:
            n += 1
        return self.songs[self.song_ids[n]]


def pair_loss_and_grads(model, pair, loss: LossKind, sampler: Optional[NegativeSampler], rng: Optional[Rng]) -> Tuple[float, Blocks]:
    if model.scoring:
        negative = sampler.draw(pair, rng)
        score_pos, cache_pos = model.forward(pair.image, pair.lyric, pair.mood_id)
        score_neg, cache_neg = model.forward(pair.image, negative.lyric, negative.mood_id)
        value, (d_pos, d_neg) = margin_score_loss(float(score_pos[0]), float(score_neg[0]))
        grads = model.backward(cache_pos, np.array([d_pos]))
        _add_into(grads, model.backward(cache_neg, np.array([d_neg])))
        return value, grads

    v = pair.image.tags
    out, cache = model.forward(pair.image, pair.lyric, pair.mood_id)
    if loss == "mse":
        value, d_out = mse_loss(v, out)
    elif loss == "cpl":
        value, d_out = cosine_loss(v, out)
    else:
        negative = sampler.draw(pair, rng)
        out_neg, cache_neg = model.forward(pair.image, negative.lyric, negative.mood_id)
        value, (d_out, d_neg) = margin_loss(v, out, out_neg)
        grads = model.backward(cache, d_out)
        _add_into(grads, model.backward(cache_neg, d_neg))
        return value, grads
    return value, model.backward(cache, d_out)


def batch_loss_and_grads(model, batch: Sequence, loss: LossKind, sampler=None, rng: Optional[Rng] = None) -> Tuple[float, Blocks]:
    """Sum of per-pair losses over ``batch`` and the summed gradients."""
    total = 0.0
    grads: Blocks = {}
    for pair in batch:
        value, pair_grads = pair_loss_and_grads(model, pair, loss, sampler, rng)
        total += value
        _add_into(grads, pair_grads)
    return total, grads
