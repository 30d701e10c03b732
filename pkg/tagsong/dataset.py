import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .const import N_ATTRIBUTES, N_OBJECTS, TAG_TOLERANCE
from .exceptions import ParameterError, SchemaError, TagsongParseError
from .numerics import Rng
from .types import SPLIT_MODES, SplitJson, SplitMode, TagGroup, TripletJson, Vector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TagLayout:
    """Tag-space layout: object dimensions first, attribute dimensions after them."""

    n_objects: int = N_OBJECTS
    n_attributes: int = N_ATTRIBUTES

    @property
    def dim(self) -> int:
        return self.n_objects + self.n_attributes

    def group_indices(self, group: str) -> np.ndarray:
        if group == "obj":
            return np.arange(self.n_objects)
        if group == "attr":
            return np.arange(self.n_objects, self.dim)
        if group in ("obj-attr", "both"):
            return np.arange(self.dim)
        raise ParameterError(f"unknown tag group '{group}'")

    def group_dim(self, group: str) -> int:
        return len(self.group_indices(group))


@dataclass(frozen=True)
class TripletRecord:
    id: str
    song_id: str
    lyric_raw: str
    tags: Vector
    mood: Optional[str]
    favorite_count: int


def normalize_mood(mood: Optional[str]) -> Optional[str]:
    if mood is None:
        return None
    mood = mood.strip().lower()
    return mood or None


def _record_from_json(obj: dict, layout: TagLayout, path, line_no: int) -> TripletRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object", path, line_no)
    for key, kinds in (("id", str), ("song_id", str), ("lyric", str), ("tags", list), ("favorite_count", int)):
        if key not in obj:
            raise SchemaError(f"missing field '{key}'", path, line_no)
        if not isinstance(obj[key], kinds) or isinstance(obj[key], bool):
            raise SchemaError(f"field '{key}' has the wrong type", path, line_no)
    mood = obj.get("mood")
    if mood is not None and not isinstance(mood, str):
        raise SchemaError("field 'mood' must be a string or null", path, line_no)
    if obj["favorite_count"] < 1:
        raise SchemaError(f"favorite_count must be >= 1, got {obj['favorite_count']}", path, line_no)

    tags = obj["tags"]
    if len(tags) != layout.dim:
        raise SchemaError(f"tags must have {layout.dim} values, found {len(tags)}", path, line_no)
    try:
        vec = np.array(tags, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError("tags must be numbers", path, line_no) from None
    if not np.all(np.isfinite(vec)):
        raise SchemaError("tags contain non-finite values", path, line_no)
    if np.any(vec < -TAG_TOLERANCE) or np.any(vec > 1.0 + TAG_TOLERANCE):
        raise SchemaError("tag probabilities outside [0, 1]", path, line_no)
    if np.any(vec < 0.0) or np.any(vec > 1.0):
        logger.warning(f"{path}:{line_no}: tag values within {TAG_TOLERANCE} of [0, 1] clamped")
        vec = np.clip(vec, 0.0, 1.0)
    vec.setflags(write=False)

    return TripletRecord(
        id=obj["id"],
        song_id=obj["song_id"],
        lyric_raw=obj["lyric"],
        tags=vec,
        mood=normalize_mood(mood),
        favorite_count=obj["favorite_count"],
    )


def load_triplets(path: Union[str, Path], layout: TagLayout = TagLayout()) -> List[TripletRecord]:
    """Read triplet JSONL, one record per line."""
    records: List[TripletRecord] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as file:
        for line_no, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as ex:
                raise TagsongParseError(f"malformed JSON: {ex.msg}", path, line_no) from None
            record = _record_from_json(obj, layout, path, line_no)
            if record.id in seen:
                raise SchemaError(f"duplicate record id '{record.id}'", path, line_no)
            seen.add(record.id)
            records.append(record)
    logger.info(f"Loaded {len(records)} triplets from {path}")
    return records


def record_to_json(record: TripletRecord) -> TripletJson:
    return {
        "id": record.id,
        "song_id": record.song_id,
        "lyric": record.lyric_raw,
        "tags": [float(v) for v in record.tags],
        "mood": record.mood,
        "favorite_count": record.favorite_count,
    }


def save_triplets(records: Iterable[TripletRecord], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as file:
        for record in records:
            file.write(json.dumps(record_to_json(record)) + "\n")


def group_by_song(records: Iterable[TripletRecord]) -> Dict[str, List[TripletRecord]]:
    groups: Dict[str, List[TripletRecord]] = defaultdict(list)
    for record in records:
        groups[record.song_id].append(record)
    return dict(groups)


def filter_triplets(
    records: Sequence[TripletRecord],
    min_occurrence: int = 5,
    per_song: Optional[int] = 5,
    min_favorites: int = 1,
) -> List[TripletRecord]:
    """Keep songs with at least ``min_occurrence`` triplets, then each song's ``per_song`` most favourited.

    Ties on favourite count go to the lower record id. ``per_song=None`` keeps
    every triplet of a surviving song. Triplets below ``min_favorites`` are
    discarded before songs are counted.
    """
    if per_song is not None and per_song < 1:
        raise ParameterError(f"per_song must be at least 1 (or None for every triplet), got {per_song}")
    kept: List[TripletRecord] = []
    pool = [r for r in records if r.favorite_count >= min_favorites]
    if len(pool) < len(records):
        logger.info(f"Dropped {len(records) - len(pool)} triplets below {min_favorites} favourites")
    for song_id, group in group_by_song(pool).items():
        if len(group) < min_occurrence:
            continue
        ranked = sorted(group, key=lambda r: (-r.favorite_count, r.id))
        kept.extend(ranked if per_song is None else ranked[:per_song])
    if not kept:
        logger.warning(f"No song has at least {min_occurrence} triplets; nothing left after filtering")
    return kept


@dataclass(frozen=True)
class SplitSpec:
    mode: SplitMode
    seed: int
    train: Tuple[str, ...]
    test: Tuple[str, ...]

    def to_json(self) -> SplitJson:
        return {"mode": self.mode, "seed": self.seed, "train": list(self.train), "test": list(self.test)}

    def check(self, records: Sequence[TripletRecord]) -> None:
        """Raise ``ParameterError`` if the split breaks its mode's song-overlap rule."""
        if set(self.train) & set(self.test):
            raise ParameterError("train and test share triplet ids")
        song_of = {r.id: r.song_id for r in records}
        train_songs = {song_of[i] for i in self.train}
        test_songs = {song_of[i] for i in self.test}
        if self.mode == "dagger" and train_songs & test_songs:
            raise ParameterError("dagger split has songs in both train and test")
        if self.mode == "section" and train_songs != test_songs:
            raise ParameterError("section split must have every song in both train and test")


def make_split(records: Sequence[TripletRecord], mode: SplitMode, seed: int, test_songs: int = 100) -> SplitSpec:
    """Hold out whole songs (dagger) or one triplet of every song (section)."""
    if mode not in SPLIT_MODES:
        raise ParameterError(f"unknown split mode '{mode}'")
    groups = group_by_song(records)
    songs = sorted(groups)
    rng = Rng(seed)
    test_ids = set()
    if mode == "dagger":
        if len(songs) < test_songs:
            raise ParameterError(f"only {len(songs)} songs available, {test_songs} requested for testing")
        for n in rng.choice(len(songs), test_songs):
            test_ids.update(r.id for r in groups[songs[n]])
    else:
        for song in songs:
            group = sorted(groups[song], key=lambda r: r.id)
            if len(group) < 2:
                raise ParameterError(f"song '{song}' has a single triplet; section splits need at least two")
            test_ids.add(group[rng.integers(len(group))].id)
    train = tuple(r.id for r in records if r.id not in test_ids)
    test = tuple(r.id for r in records if r.id in test_ids)
    split = SplitSpec(mode=mode, seed=seed, train=train, test=test)
    split.check(records)
    return split


def save_split(split: SplitSpec, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as file:
        json.dump(split.to_json(), file, indent=2)
        file.write("\n")


def load_split(path: Union[str, Path]) -> SplitSpec:
    try:
        with open(path, "r", encoding="utf-8") as file:
            obj = json.load(file)
    except json.JSONDecodeError as ex:
        raise TagsongParseError(f"malformed split JSON: {ex.msg}", path, ex.lineno) from None
    for key in ("mode", "seed", "train", "test"):
        if key not in obj:
            raise SchemaError(f"split is missing '{key}'", path)
    if obj["mode"] not in SPLIT_MODES:
        raise SchemaError(f"unknown split mode '{obj['mode']}'", path)
    return SplitSpec(mode=obj["mode"], seed=int(obj["seed"]), train=tuple(obj["train"]), test=tuple(obj["test"]))


def records_for_split(records: Sequence[TripletRecord], split: SplitSpec) -> Tuple[List[TripletRecord], List[TripletRecord]]:
    by_id = {r.id: r for r in records}
    missing = [i for i in (*split.train, *split.test) if i not in by_id]
    if missing:
        raise SchemaError(f"split references {len(missing)} unknown triplet ids, e.g. '{missing[0]}'")
    return [by_id[i] for i in split.train], [by_id[i] for i in split.test]


def build_mood_vocab(train_records: Iterable[TripletRecord]) -> Dict[str, int]:
    """Mood string -> row id, from the training split only."""
    moods = sorted({r.mood for r in train_records if r.mood is not None})
    return {mood: n for n, mood in enumerate(moods)}


def tag_distribution_stats(
    records: Sequence[TripletRecord], group: Union[TagGroup, str], layout: TagLayout = TagLayout()
) -> List[Tuple[int, float]]:
    """Mean probability of every dimension in ``group``, highest first (ties by index)."""
    if not records:
        raise ParameterError("cannot compute tag statistics of an empty corpus")
    indices = layout.group_indices(group)
    means = np.mean([r.tags[indices] for r in records], axis=0)
    order = np.argsort(-means, kind="stable")
    return [(int(indices[n]), float(means[n])) for n in order]


def favorite_count_stats(records: Sequence[TripletRecord], thresholds: Sequence[int] = (1, 3, 10)) -> Dict[str, int]:
    if not records:
        raise ParameterError("cannot compute favourite statistics of an empty corpus")
    counts = [r.favorite_count for r in records]
    stats = {f">={t}": sum(1 for c in counts if c >= t) for t in thresholds}
    stats["min"] = min(counts)
    stats["max"] = max(counts)
    return stats
