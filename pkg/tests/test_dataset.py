import json
import logging

import numpy as np
import pytest

from conftest import TOY_LAYOUT, make_record
from tagsong.dataset import (
    TagLayout,
    build_mood_vocab,
    favorite_count_stats,
    filter_triplets,
    load_split,
    load_triplets,
    make_split,
    records_for_split,
    save_split,
    save_triplets,
    tag_distribution_stats,
)
from tagsong.exceptions import ParameterError, SchemaError, TagsongParseError
from tagsong.numerics import Rng
from tagsong.synthetic import make_corpus


def triplet_line(record_id="t1", song_id="s1", dim=515, **overrides):
    obj = {
        "id": record_id,
        "song_id": song_id,
        "lyric": "love in the night",
        "tags": [0.5] * dim,
        "mood": None,
        "favorite_count": 3,
    }
    obj.update(overrides)
    return json.dumps(obj)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_load_valid_file(tmp_path):
    path = write_lines(tmp_path / "t.jsonl", [triplet_line(f"t{n}", mood=" Happy ") for n in range(3)])
    records = load_triplets(path)
    assert [r.id for r in records] == ["t0", "t1", "t2"]
    assert records[0].tags.shape == (515,)
    assert records[0].mood == "happy"


def test_load_wrong_tag_length(tmp_path):
    path = write_lines(tmp_path / "t.jsonl", [triplet_line(dim=514)])
    with pytest.raises(SchemaError) as excinfo:
        load_triplets(path)
    assert excinfo.value.line == 1


def test_load_clamps_within_tolerance(tmp_path, caplog):
    tags = [0.5] * 515
    tags[3] = 1.0000000001
    path = write_lines(tmp_path / "t.jsonl", [triplet_line(tags=tags)])
    with caplog.at_level(logging.WARNING, logger="tagsong"):
        records = load_triplets(path)
    assert records[0].tags[3] == 1.0
    assert "clamped" in caplog.text


def test_load_rejects_out_of_range_tags(tmp_path):
    tags = [0.5] * 515
    tags[0] = 1.2
    with pytest.raises(SchemaError):
        load_triplets(write_lines(tmp_path / "t.jsonl", [triplet_line(tags=tags)]))


def test_load_malformed_json_names_line(tmp_path):
    path = write_lines(tmp_path / "t.jsonl", [triplet_line(), "{not json"])
    with pytest.raises(TagsongParseError) as excinfo:
        load_triplets(path)
    assert excinfo.value.line == 2


@pytest.mark.parametrize(
    "overrides",
    [{"favorite_count": 0}, {"favorite_count": "many"}, {"song_id": 4}, {"mood": 3}, {"favorite_count": True}],
)
def test_load_schema_violations(tmp_path, overrides):
    with pytest.raises(SchemaError):
        load_triplets(write_lines(tmp_path / "t.jsonl", [triplet_line(**overrides)]))


def test_load_duplicate_ids(tmp_path):
    with pytest.raises(SchemaError):
        load_triplets(write_lines(tmp_path / "t.jsonl", [triplet_line("a"), triplet_line("a")]))


def test_save_and_load_keep_records(tmp_path, corpus):
    path = tmp_path / "t.jsonl"
    save_triplets(corpus.records, path)
    loaded = load_triplets(path, corpus.layout)
    assert [r.id for r in loaded] == [r.id for r in corpus.records]
    np.testing.assert_array_equal(loaded[5].tags, corpus.records[5].tags)


def test_filter_drops_small_songs():
    records = [make_record(f"a{n}", "a") for n in range(4)]
    assert filter_triplets(records, min_occurrence=5) == []


def test_filter_keeps_most_favourited():
    counts = [9, 8, 7, 6, 5, 4, 3]
    records = [make_record(f"b{n}", "b", favorite_count=c) for n, c in enumerate(reversed(counts))]
    kept = filter_triplets(records, min_occurrence=5, per_song=5)
    assert sorted(r.favorite_count for r in kept) == [5, 6, 7, 8, 9]


def test_filter_ties_go_to_lower_id():
    records = [make_record(f"c{n}", "c", favorite_count=2) for n in reversed(range(6))]
    kept = filter_triplets(records, min_occurrence=5, per_song=2)
    assert [r.id for r in kept] == ["c0", "c1"]


def test_filter_matches_group_sort_truncate():
    rng = Rng(11)
    records = []
    for n in range(300):
        song = f"s{rng.integers(40)}"
        records.append(make_record(f"r{n:03d}", song, favorite_count=1 + rng.integers(6)))
    kept = filter_triplets(records, min_occurrence=5, per_song=3, min_favorites=2)

    expected = set()
    pool = [r for r in records if r.favorite_count >= 2]
    for song in {r.song_id for r in pool}:
        group = [r for r in pool if r.song_id == song]
        if len(group) >= 5:
            group.sort(key=lambda r: (-r.favorite_count, r.id))
            expected.update(r.id for r in group[:3])
    assert {r.id for r in kept} == expected


def test_filter_keeps_every_triplet_without_cap():
    records = [make_record(f"d{n}", "d") for n in range(7)]
    assert len(filter_triplets(records, min_occurrence=5, per_song=None)) == 7


@pytest.mark.parametrize("per_song", [0, -2])
def test_filter_rejects_non_positive_cap(per_song):
    records = [make_record(f"d{n}", "d") for n in range(7)]
    with pytest.raises(ParameterError):
        filter_triplets(records, min_occurrence=5, per_song=per_song)


def _songs(records, ids):
    song_of = {r.id: r.song_id for r in records}
    return {song_of[i] for i in ids}


def test_dagger_split_counts():
    records = [make_record(f"s{s:03d}-{i}", f"s{s:03d}") for s in range(586) for i in range(2)]
    split = make_split(records, "dagger", seed=0, test_songs=100)
    assert len(_songs(records, split.test)) == 100
    assert len(_songs(records, split.train)) == 486


def test_section_split_counts():
    records = [make_record(f"s{s:03d}-{i}", f"s{s:03d}") for s in range(586) for i in range(5)]
    split = make_split(records, "section", seed=0)
    assert len(split.test) == 586
    assert len(split.train) == 2344


def test_split_invariants_over_random_corpora():
    for trial in range(1000):
        rng = Rng(trial)
        n_songs = 3 + rng.integers(10)
        records = []
        for s in range(n_songs):
            for i in range(2 + rng.integers(4)):
                records.append(make_record(f"{s}-{i}", f"song{s}"))
        mode = "dagger" if trial % 2 else "section"
        test_songs = 1 + rng.integers(n_songs)
        split = make_split(records, mode, seed=trial, test_songs=test_songs)
        assert sorted(split.train + split.test) == sorted(r.id for r in records)
        assert not set(split.train) & set(split.test)
        if mode == "dagger":
            assert not _songs(records, split.train) & _songs(records, split.test)
        else:
            assert _songs(records, split.test) == _songs(records, split.train) == {r.song_id for r in records}
            assert len(split.test) == n_songs
        assert make_split(records, mode, seed=trial, test_songs=test_songs) == split


def test_split_is_deterministic(corpus):
    assert make_split(corpus.records, "dagger", 5, 4) == make_split(corpus.records, "dagger", 5, 4)
    assert make_split(corpus.records, "section", 5) == make_split(corpus.records, "section", 5)
    assert make_split(corpus.records, "dagger", 5, 4) != make_split(corpus.records, "dagger", 6, 4)


def test_split_errors(corpus):
    with pytest.raises(ParameterError):
        make_split(corpus.records, "dagger", 0, test_songs=13)
    single = [make_record("x", "only")]
    with pytest.raises(ParameterError):
        make_split(single, "section", 0)


def test_split_file_round_trip(tmp_path, corpus):
    split = make_split(corpus.records, "dagger", 1, 3)
    path = tmp_path / "split.json"
    save_split(split, path)
    assert load_split(path) == split
    train, test = records_for_split(corpus.records, split)
    assert len(train) + len(test) == len(corpus.records)


def test_split_with_unknown_ids(corpus):
    split = make_split(corpus.records, "dagger", 1, 3)
    with pytest.raises(SchemaError):
        records_for_split(corpus.records[3:], split)


def test_load_split_errors(tmp_path):
    path = tmp_path / "split.json"
    path.write_text('{"mode": "dagger", "seed": 0, "train": []}', encoding="utf-8")
    with pytest.raises(SchemaError):
        load_split(path)
    path.write_text("{", encoding="utf-8")
    with pytest.raises(TagsongParseError):
        load_split(path)


def test_mood_vocab_is_sorted():
    records = [make_record("a", "s", mood="sad"), make_record("b", "s", mood="calm"), make_record("c", "s")]
    assert build_mood_vocab(records) == {"calm": 0, "sad": 1}


def test_tag_distribution_single_record():
    tags = np.array([0.1, 0.7, 0.3, 0.0, 0.5, 0.2, 0.9, 0.4, 0.6, 0.8])
    stats = tag_distribution_stats([make_record("a", "s", tags=tags)], "obj", TOY_LAYOUT)
    assert stats == [(1, 0.7), (4, 0.5), (2, 0.3), (5, 0.2), (0, 0.1), (3, 0.0)]


def test_tag_distribution_means():
    a = make_record("a", "s", tags=np.linspace(0.0, 0.9, 10))
    b = make_record("b", "s", tags=np.full(10, 0.3))
    stats = dict(tag_distribution_stats([a, b], "attr", TOY_LAYOUT))
    assert set(stats) == {6, 7, 8, 9}
    assert stats[9] == pytest.approx((0.9 + 0.3) / 2)


def test_tag_distribution_skew():
    corpus = make_corpus(n_songs=10, layout=TagLayout(6, 4), skew_dims=(2,), seed=1)
    assert tag_distribution_stats(corpus.records, "obj", corpus.layout)[0][0] == 2


def test_stats_on_empty_corpus():
    with pytest.raises(ParameterError):
        tag_distribution_stats([], "obj")
    with pytest.raises(ParameterError):
        favorite_count_stats([])


def test_favorite_count_stats():
    records = [make_record(str(n), "s", favorite_count=c) for n, c in enumerate([1, 2, 3, 10, 40])]
    assert favorite_count_stats(records) == {">=1": 5, ">=3": 3, ">=10": 2, "min": 1, "max": 40}
