"""Cosine ranking and the rank-based retrieval metrics (R@K, median rank)."""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .const import DAGGER_RECALL_KS, SECTION_RECALL_KS
from .exceptions import ConfigError, NumericError, ParameterError
from .types import DIRECTIONS, Direction, DirectionReport, Matrix, MetricsReport, SplitMode, TagGroup, Vector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankingResult:
    """One query's gallery, best match first."""

    query_id: str
    candidate_ids: Tuple[str, ...]
    relevant: Tuple[bool, ...]
    scores: Tuple[float, ...]

    @property
    def best_rank(self) -> int:
        """1-based rank of the closest relevant candidate."""
        for rank, flag in enumerate(self.relevant, start=1):
            if flag:
                return rank
        raise ParameterError(f"query '{self.query_id}' has no relevant candidate")

    def top(self, n: int) -> List[Tuple[str, float]]:
        return list(zip(self.candidate_ids[:n], self.scores[:n]))


def _unit_rows(vectors: Matrix, what: str) -> Matrix:
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise NumericError(f"zero-norm {what} vector")
    return vectors / norms[:, None]


def cosine_matrix(queries: Matrix, gallery: Matrix) -> Matrix:
    """``S[q, g] = cos(queries[q], gallery[g])``."""
    return _unit_rows(np.atleast_2d(queries), "query") @ _unit_rows(np.atleast_2d(gallery), "gallery").T


def rank_by_scores(
    query_id: str,
    candidate_ids: Sequence[str],
    scores: Vector,
    is_relevant: Optional[Callable[[str], bool]] = None,
) -> RankingResult:
    """Order candidates by descending score; equal scores keep gallery order."""
    if len(candidate_ids) == 0:
        raise ParameterError("cannot rank against an empty gallery")
    order = np.argsort(-np.asarray(scores), kind="stable")
    ids = tuple(candidate_ids[n] for n in order)
    flags = tuple(bool(is_relevant(i)) if is_relevant else False for i in ids)
    return RankingResult(query_id=query_id, candidate_ids=ids, relevant=flags, scores=tuple(float(scores[n]) for n in order))


def rank_candidates(
    query_vec: Vector,
    gallery: Sequence[Tuple[str, Vector]],
    query_id: str = "query",
    is_relevant: Optional[Callable[[str], bool]] = None,
) -> RankingResult:
    if not gallery:
        raise ParameterError("cannot rank against an empty gallery")
    ids = [item_id for item_id, _ in gallery]
    scores = cosine_matrix(query_vec, np.array([vec for _, vec in gallery]))[0]
    return rank_by_scores(query_id, ids, scores, is_relevant)


def recall_at_k(results: Sequence[RankingResult], k: int) -> float:
    """Percentage of queries with a relevant candidate in their top ``k``."""
    if k < 1:
        raise ParameterError(f"k must be at least 1, got {k}")
    if not results:
        raise ParameterError("no ranking results to score")
    hits = sum(1 for result in results if result.best_rank <= k)
    return 100.0 * hits / len(results)


def median_rank(results: Sequence[RankingResult]) -> float:
    """Median best rank; an even number of queries gives the mean of the two middle ranks."""
    if not results:
        raise ParameterError("no ranking results to score")
    return float(np.median([result.best_rank for result in results]))


def per_song_recall(results: Sequence[RankingResult], song_of: Mapping[str, str], k: int) -> Dict[str, float]:
    """R@k computed separately over each song's queries."""
    by_song: Dict[str, List[RankingResult]] = {}
    for result in results:
        by_song.setdefault(song_of[result.query_id], []).append(result)
    return {song: recall_at_k(group, k) for song, group in sorted(by_song.items())}


def default_ks(mode: SplitMode) -> Tuple[int, ...]:
    return DAGGER_RECALL_KS if mode == "dagger" else SECTION_RECALL_KS


def score_matrix(model, images: Sequence, lyrics: Sequence, moods: Optional[Mapping[str, Optional[int]]] = None) -> Matrix:
    """Relevance of every (image, lyric) pair, images along rows.

    Models whose lyric representation ignores the image are projected once per
    lyric and compared by cosine; conditioned models score every pair.
    """
    moods = moods or {}
    if not images or not lyrics:
        raise ParameterError("cannot score an empty gallery")
    if model.conditioned:
        scores = np.empty((len(images), len(lyrics)))
        for row, image in enumerate(images):
            for col, lyric in enumerate(lyrics):
                scores[row, col] = model.score(image, lyric, moods.get(lyric.song_id))
        return scores
    projected = np.array([model.predict(lyric, None, moods.get(lyric.song_id)) for lyric in lyrics])
    return cosine_matrix(np.array([image.tags for image in images]), projected)


def rank_all(scores: Matrix, images: Sequence, lyrics: Sequence, direction: Direction) -> List[RankingResult]:
    if direction == "image2song":
        lyric_ids = [lyric.song_id for lyric in lyrics]
        return [
            rank_by_scores(image.id, lyric_ids, scores[row], lambda song, s=image.song_id: song == s)
            for row, image in enumerate(images)
        ]
    image_ids = [image.id for image in images]
    song_of = {image.id: image.song_id for image in images}
    return [
        rank_by_scores(lyric.song_id, image_ids, scores[:, col], lambda i, s=lyric.song_id: song_of[i] == s)
        for col, lyric in enumerate(lyrics)
    ]


def direction_report(results: Sequence[RankingResult], direction: Direction, gallery_size: int, ks: Sequence[int], song_of: Mapping[str, str]) -> DirectionReport:
    return {
        "direction": direction,
        "queries": len(results),
        "gallery": gallery_size,
        "recall": {f"R@{k}": recall_at_k(results, k) for k in ks},
        "median_rank": median_rank(results),
        "per_song": per_song_recall(results, song_of, ks[0]),
    }


def evaluate(
    model,
    featurizer,
    test_records: Sequence,
    mode: SplitMode,
    directions: Sequence[Direction] = DIRECTIONS,
    tag_group: Optional[TagGroup] = None,
    ks: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> MetricsReport:
    """Rank the test split in each requested direction.

    image2song queries every test image against one lyric per test song;
    song2image queries every test lyric against all test images. Relevance is
    a shared song id.
    """
    tag_group = tag_group or model.config.tag_group
    if tag_group != model.config.tag_group:
        raise ConfigError(f"model was trained on tag group '{model.config.tag_group}', evaluation asked for '{tag_group}'")
    for direction in directions:
        if direction not in DIRECTIONS:
            raise ParameterError(f"unknown direction '{direction}'")
    ks = tuple(sorted(set(ks))) if ks else default_ks(mode)

    images, lyrics, moods = featurizer.gallery(test_records)
    if not images or not lyrics:
        raise ParameterError("the test split has no usable image/lyric pairs")
    logger.info(f"Scoring {len(images)} images against {len(lyrics)} lyrics")
    scores = score_matrix(model, images, lyrics, moods)

    reports = []
    for direction in directions:
        results = rank_all(scores, images, lyrics, direction)
        if direction == "image2song":
            song_of = {image.id: image.song_id for image in images}
            gallery_size = len(lyrics)
        else:
            song_of = {lyric.song_id: lyric.song_id for lyric in lyrics}
            gallery_size = len(images)
        reports.append(direction_report(results, direction, gallery_size, ks, song_of))
    return {"model": model.kind, "mode": mode, "tag_group": tag_group, "seed": seed, "directions": reports}
