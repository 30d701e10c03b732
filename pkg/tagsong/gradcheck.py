"""Finite-difference verification of every model's analytic gradients."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .models import ImageItem, LyricItem, ModelConfig, RetrievalModel, TrainingPair, build_model
from .numerics import Rng, finite_diff_grad, relative_error
from .text import TokenSequence
from .training import NegativeSampler, pair_loss_and_grads
from .types import Blocks, LossKind, ModelKind

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_STEP = 1e-5


@dataclass
class BlockCheck:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


@dataclass
class GradcheckReport:
    kind: ModelKind
    seed: int
    objective: str
    blocks: List[BlockCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.blocks)

    @property
    def max_rel_error(self) -> float:
        return max((check.max_rel_error for check in self.blocks), default=0.0)


def toy_config(kind: ModelKind, share_attention: bool = False) -> ModelConfig:
    """H = M = 4, D = 10, 8-dim embeddings."""
    return ModelConfig(
        kind=kind,
        tag_group="obj-attr",
        hidden_size=4,
        attention_size=4,
        mlp_hidden=(5,),
        k_tags=3,
        share_attention=share_attention,
        embedding_dim=8,
        max_len=6,
        bow_vocab=12,
        n_objects=6,
        n_attributes=4,
    )


def _toy_lyric(rng: Rng, song_id: str, length: int, dim: int) -> LyricItem:
    words = [f"w{rng.integers(12)}" for _ in range(length)]
    return LyricItem(
        song_id=song_id,
        words=words,
        tokens=TokenSequence(tokens=tuple(range(length)), source_len=length),
        embedded=rng.normal((length, dim)),
    )


def toy_problem(config: ModelConfig, seed: int, length: int = 5) -> Tuple[RetrievalModel, List[TrainingPair]]:
    """A freshly initialised model and two training pairs of different songs."""
    rng = Rng(seed)
    bow_vocab = None
    if config.kind == "bow":
        bow_vocab = ({f"w{n}": n for n in range(config.bow_vocab)}, rng.uniform(0.1, 2.0, config.bow_vocab))
    mood_vocab = {"calm": 0, "happy": 1} if config.uses_mood else None
    model = build_model(config, rng.child(1), mood_vocab=mood_vocab, bow_vocab=bow_vocab)

    pairs = []
    for n in range(2):
        song_id = f"song{n}"
        image = ImageItem(
            id=f"img{n}",
            song_id=song_id,
            tags=rng.uniform(0.05, 0.95, config.output_dim),
            v_tilde=rng.normal(config.embedding_dim),
        )
        lyric = _toy_lyric(rng, song_id, max(1, length - n), config.embedding_dim)
        pairs.append(TrainingPair(image=image, lyric=lyric, mood_id=n if config.uses_mood else None))
    return model, pairs


def _projection_objective(model: RetrievalModel, pair: TrainingPair, rng: Rng) -> Tuple[Callable[[], float], Blocks]:
    out, cache = model.forward(pair.image, pair.lyric, pair.mood_id)
    upstream = rng.normal(out.shape)

    def objective() -> float:
        return float(upstream @ model.forward(pair.image, pair.lyric, pair.mood_id)[0])

    return objective, model.backward(cache, upstream)


def _loss_objective(model: RetrievalModel, pairs: Sequence[TrainingPair], loss: LossKind, seed: int) -> Tuple[Callable[[], float], Blocks]:
    sampler = NegativeSampler(pairs)

    def objective() -> float:
        return pair_loss_and_grads(model, pairs[0], loss, sampler, Rng(seed, (7,)))[0]

    return objective, pair_loss_and_grads(model, pairs[0], loss, sampler, Rng(seed, (7,)))[1]


def check_gradients(
    model: RetrievalModel,
    pairs: Sequence[TrainingPair],
    seed: int = 0,
    loss: Optional[LossKind] = None,
    h: float = GRADCHECK_STEP,
    tolerance: float = GRADCHECK_TOLERANCE,
    corrupt: Optional[str] = None,
) -> GradcheckReport:
    """Compare ``model.backward`` against central differences for every parameter block.

    Without ``loss`` the objective is a random linear read-out of the model
    output; with it, the full training loss of the first pair. ``corrupt``
    names a block whose analytic gradient is deliberately perturbed.
    """
    if loss is None:
        objective, analytic = _projection_objective(model, pairs[0], Rng(seed, (3,)))
    else:
        objective, analytic = _loss_objective(model, pairs, loss, seed)

    report = GradcheckReport(kind=model.kind, seed=seed, objective=loss or "projection")
    for name, param in sorted(model.blocks().items()):
        grad = analytic.get(name)
        grad = np.zeros_like(param) if grad is None else grad.copy()
        if name == corrupt:
            grad.flat[0] += 1e-2 + abs(grad.flat[0])
        numeric = finite_diff_grad(lambda _: objective(), param, h)
        error = relative_error(grad, numeric)
        report.blocks.append(BlockCheck(name=name, max_rel_error=error, tolerance=tolerance))
        logger.debug(f"{model.kind} {name}: max relative error {error:.3e}")
    return report


def run_gradcheck(
    kinds: Sequence[ModelKind],
    seeds: Sequence[int] = (0,),
    loss: Optional[LossKind] = None,
    share_attention: bool = False,
    corrupt: Optional[str] = None,
) -> List[GradcheckReport]:
    reports = []
    for kind in kinds:
        for seed in seeds:
            model, pairs = toy_problem(toy_config(kind, share_attention), seed)
            reports.append(check_gradients(model, pairs, seed=seed, loss=loss, corrupt=corrupt))
    return reports


def summarize(reports: Sequence[GradcheckReport]) -> Dict[str, float]:
    """Worst relative error per ``kind/block`` across seeds."""
    worst: Dict[str, float] = {}
    for report in reports:
        for check in report.blocks:
            key = f"{report.kind}/{check.name}"
            worst[key] = max(worst.get(key, 0.0), check.max_rel_error)
    return worst
