import logging

import numpy as np
import pytest

from tagsong.exceptions import EmptyLyricError, SchemaError, TagsongIndexError, TagsongParseError
from tagsong.numerics import Rng
from tagsong.text import (
    EmbeddingTable,
    TokenSequence,
    embed_phrase,
    embed_tokens,
    load_embeddings,
    load_tag_names,
    lyric_to_sequence,
    preprocess_lyric,
    tokens_to_embedding_ids,
)


def write_vectors(path, header, rows):
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
    return path


def test_preprocess_strips_punctuation_and_case():
    assert preprocess_lyric("Jingle bells, jingle bells!") == ["jingle", "bells", "jingle", "bells"]


def test_preprocess_drops_stop_words():
    assert preprocess_lyric("It's a beautiful day") == ["beautiful", "day"]


def test_preprocess_only_stop_words():
    with pytest.raises(EmptyLyricError):
        preprocess_lyric("the of and")


def test_preprocess_is_idempotent():
    rng = Rng(17)
    alphabet = "abcdeNOPQxyz019 ,.!?'-\t\n"
    lyrics = ["Jingle bells, jingle bells!", "It's a beautiful day", "Ünïcode & 42 nights..."]
    lyrics += ["".join(alphabet[rng.integers(len(alphabet))] for _ in range(40)) for _ in range(200)]
    for raw in lyrics:
        try:
            tokens = preprocess_lyric(raw)
        except EmptyLyricError:
            continue
        assert preprocess_lyric(" ".join(tokens)) == tokens


def test_preprocess_custom_stopwords():
    assert preprocess_lyric("the night", stopwords=frozenset({"night"})) == ["the"]


def test_load_embeddings(tmp_path):
    path = write_vectors(tmp_path / "vec.txt", "2 3", ["love 1 2 3", "night 0.5 -1 0"])
    table = load_embeddings(path, expected_dim=3)
    assert len(table) == 2
    assert table.dim == 3
    np.testing.assert_array_equal(table.weights[table.vocab["night"]], [0.5, -1.0, 0.0])


def test_load_embeddings_is_frozen(tmp_path):
    table = load_embeddings(write_vectors(tmp_path / "vec.txt", "1 2", ["love 1 2"]), expected_dim=2)
    with pytest.raises(ValueError):
        table.weights[0, 0] = 5.0


def test_load_embeddings_dimension_mismatch(tmp_path):
    path = write_vectors(tmp_path / "vec.txt", "5 128", ["w%d %s" % (i, " ".join(["0.1"] * 128)) for i in range(5)])
    with pytest.raises(TagsongParseError) as excinfo:
        load_embeddings(path)
    assert excinfo.value.line == 1
    assert len(load_embeddings(path, expected_dim=128)) == 5


def test_load_embeddings_short_row_reports_line(tmp_path):
    path = write_vectors(tmp_path / "vec.txt", "2 3", ["love 1 2 3", "night 1 2"])
    with pytest.raises(TagsongParseError) as excinfo:
        load_embeddings(path, expected_dim=3)
    assert excinfo.value.line == 3
    assert f"{path}:3:" in str(excinfo.value)


def test_load_embeddings_non_finite(tmp_path):
    path = write_vectors(tmp_path / "vec.txt", "1 2", ["love nan 1"])
    with pytest.raises(TagsongParseError):
        load_embeddings(path, expected_dim=2)


def test_load_embeddings_count_mismatch(tmp_path):
    path = write_vectors(tmp_path / "vec.txt", "3 2", ["love 1 1", "night 2 2"])
    with pytest.raises(TagsongParseError):
        load_embeddings(path, expected_dim=2)


def test_load_embeddings_duplicate_keeps_first(tmp_path, caplog):
    path = write_vectors(tmp_path / "vec.txt", "2 2", ["love 1 1", "love 9 9"])
    with caplog.at_level(logging.WARNING, logger="tagsong"):
        table = load_embeddings(path, expected_dim=2)
    assert len(table) == 1
    np.testing.assert_array_equal(table.weights[0], [1.0, 1.0])
    assert "duplicate word 'love'" in caplog.text


def test_from_words_rejects_duplicates():
    with pytest.raises(SchemaError):
        EmbeddingTable.from_words(["a", "a"], np.zeros((2, 2)))


def test_checksum_depends_on_weights(small_table):
    other = EmbeddingTable.from_words(sorted(small_table.vocab, key=small_table.vocab.get), small_table.weights + 1.0)
    assert small_table.checksum() == EmbeddingTable.from_words(
        sorted(small_table.vocab, key=small_table.vocab.get), small_table.weights
    ).checksum()
    assert small_table.checksum() != other.checksum()


def test_out_of_vocabulary_words_are_dropped(small_table):
    seq = tokens_to_embedding_ids(["love", "xyzzy", "night"], small_table)
    assert seq.tokens == (small_table.vocab["love"], small_table.vocab["night"])
    assert seq.source_len == 3


def test_all_out_of_vocabulary(small_table):
    with pytest.raises(EmptyLyricError):
        tokens_to_embedding_ids(["xyzzy", "plugh"], small_table)


def test_truncation_keeps_first_tokens(small_table):
    words = ["love", "night"] * 300
    seq = tokens_to_embedding_ids(words, small_table, max_len=500)
    assert len(seq) == 500
    assert seq.source_len == 600
    assert seq.tokens[0] == small_table.vocab["love"]


def test_lyric_to_sequence(small_table):
    seq = lyric_to_sequence("Jingle bells, jingle bells!", small_table)
    jingle, bells = small_table.vocab["jingle"], small_table.vocab["bells"]
    assert seq.tokens == (jingle, bells, jingle, bells)


def test_empty_token_sequence():
    with pytest.raises(EmptyLyricError):
        TokenSequence(tokens=(), source_len=0)


def test_embed_tokens_equals_one_hot_product(small_table):
    tokens = [3, 0, 3, 5]
    one_hot = np.zeros((len(tokens), len(small_table)))
    one_hot[np.arange(len(tokens)), tokens] = 1.0
    np.testing.assert_allclose(embed_tokens(tokens, small_table), one_hot @ small_table.weights)


def test_embed_tokens_out_of_range(small_table):
    with pytest.raises(TagsongIndexError):
        embed_tokens([0, len(small_table)], small_table)
    with pytest.raises(IndexError):
        embed_tokens([-1], small_table)


def test_embed_phrase_averages_words(small_table):
    expected = (small_table.weights[small_table.vocab["love"]] + small_table.weights[small_table.vocab["night"]]) / 2
    np.testing.assert_allclose(embed_phrase("love_night", small_table), expected)
    np.testing.assert_array_equal(embed_phrase("christmas tree", small_table), np.zeros(small_table.dim))


def test_load_tag_names(tmp_path):
    path = tmp_path / "tags.txt"
    path.write_text("dog\ncat\nred\n", encoding="utf-8")
    assert load_tag_names(path, 3) == ["dog", "cat", "red"]
    with pytest.raises(SchemaError):
        load_tag_names(path, 4)
