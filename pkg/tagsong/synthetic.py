"""Synthetic corpora with a known image/lyric correspondence.

Every song owns a distinct pair of "theme" tag dimensions. Its images put high
probability on those two dimensions and low probability elsewhere, and its
lyric mixes random filler words with the names of its theme tags, so a model
that reads the right words can always tell the songs apart.
"""
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .dataset import TagLayout, TripletRecord, save_triplets
from .exceptions import ParameterError
from .numerics import Rng
from .text import EmbeddingTable

logger = logging.getLogger(__name__)

MOODS = ("calm", "happy", "sad")


@dataclass
class SyntheticCorpus:
    table: EmbeddingTable
    tag_names: List[str]
    records: List[TripletRecord]
    themes: Dict[str, Tuple[int, int]]
    layout: TagLayout


def _tag_names(layout: TagLayout) -> List[str]:
    return [f"obj{n}" for n in range(layout.n_objects)] + [f"attr{n}" for n in range(layout.n_attributes)]


def make_corpus(
    n_songs: int = 20,
    images_per_song: int = 1,
    layout: TagLayout = TagLayout(6, 4),
    embedding_dim: int = 8,
    filler_words: int = 40,
    lyric_len: int = 8,
    tag_words: bool = True,
    skew_dims: Sequence[int] = (),
    seed: int = 0,
) -> SyntheticCorpus:
    """Build a corpus of ``n_songs`` songs with ``images_per_song`` images each.

    ``tag_words=False`` leaves theme tag names out of the lyrics, so lyrics carry
    no information about their images. ``skew_dims`` get an extra 0.5 of
    probability in every image.
    """
    combos = list(itertools.combinations(range(layout.dim), 2))
    if n_songs > len(combos):
        raise ParameterError(f"{layout.dim} tag dimensions separate at most {len(combos)} songs, {n_songs} requested")
    rng = Rng(seed)
    names = _tag_names(layout)
    fillers = [f"word{n}" for n in range(filler_words)]
    words = names + fillers
    table = EmbeddingTable.from_words(words, rng.normal((len(words), embedding_dim)))

    order = rng.permutation(len(combos))
    records: List[TripletRecord] = []
    themes: Dict[str, Tuple[int, int]] = {}
    for s in range(n_songs):
        song_id = f"song{s:03d}"
        theme = combos[order[s]]
        themes[song_id] = theme
        lyric = [fillers[rng.integers(filler_words)] for _ in range(lyric_len)]
        if tag_words:
            for dim in theme:
                lyric.insert(rng.integers(len(lyric) + 1), names[dim])
        mood = MOODS[s % len(MOODS)]
        for i in range(images_per_song):
            tags = rng.uniform(0.0, 0.1, layout.dim)
            tags[list(theme)] = rng.uniform(0.8, 0.95, 2)
            for dim in skew_dims:
                tags[dim] = min(1.0, tags[dim] + 0.5)
            tags.setflags(write=False)
            records.append(
                TripletRecord(
                    id=f"{song_id}-img{i:02d}",
                    song_id=song_id,
                    lyric_raw=" ".join(lyric).capitalize() + ".",
                    tags=tags,
                    mood=mood,
                    favorite_count=1 + rng.integers(20),
                )
            )
    logger.debug(f"Synthesised {len(records)} triplets over {n_songs} songs")
    return SyntheticCorpus(table=table, tag_names=names, records=records, themes=themes, layout=layout)


def save_embeddings(table: EmbeddingTable, path: Union[str, Path]) -> None:
    words = sorted(table.vocab, key=table.vocab.__getitem__)
    with open(path, "w", encoding="utf-8") as file:
        file.write(f"{len(words)} {table.dim}\n")
        for word in words:
            values = " ".join(repr(float(v)) for v in table.weights[table.vocab[word]])
            file.write(f"{word} {values}\n")


def write_corpus(corpus: SyntheticCorpus, directory: Union[str, Path]) -> Dict[str, Path]:
    """Write embeddings, tag names and triplets under ``directory``; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "embeddings": directory / "embeddings.txt",
        "tag_names": directory / "tag_names.txt",
        "triplets": directory / "triplets.jsonl",
    }
    save_embeddings(corpus.table, paths["embeddings"])
    paths["tag_names"].write_text("\n".join(corpus.tag_names) + "\n", encoding="utf-8")
    save_triplets(corpus.records, paths["triplets"])
    return paths


def oracle_projection(corpus: SyntheticCorpus, song_id: str) -> np.ndarray:
    """Mean tag vector of a song's images: the ideal projection of its lyric."""
    return np.mean([r.tags for r in corpus.records if r.song_id == song_id], axis=0)
