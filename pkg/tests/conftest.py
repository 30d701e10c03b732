import numpy as np
import pytest

from tagsong.dataset import TagLayout, TripletRecord
from tagsong.models import Featurizer, ModelConfig
from tagsong.numerics import Rng
from tagsong.synthetic import make_corpus, write_corpus
from tagsong.text import EmbeddingTable

TOY_LAYOUT = TagLayout(6, 4)


def toy_model_config(kind="ours", **overrides) -> ModelConfig:
    settings = dict(
        kind=kind,
        tag_group="obj-attr",
        hidden_size=4,
        attention_size=4,
        mlp_hidden=(6,),
        k_tags=2,
        embedding_dim=8,
        max_len=20,
        bow_vocab=50,
        n_objects=TOY_LAYOUT.n_objects,
        n_attributes=TOY_LAYOUT.n_attributes,
    )
    settings.update(overrides)
    return ModelConfig(**settings)


def make_record(record_id, song_id, tags=None, favorite_count=1, mood=None, lyric="love song words", dim=None):
    dim = dim or TOY_LAYOUT.dim
    vec = np.full(dim, 0.1) if tags is None else np.asarray(tags, dtype=np.float64)
    vec.setflags(write=False)
    return TripletRecord(id=record_id, song_id=song_id, lyric_raw=lyric, tags=vec, mood=mood, favorite_count=favorite_count)


@pytest.fixture
def rng():
    return Rng(42)


@pytest.fixture
def small_table():
    words = ["jingle", "bells", "beautiful", "day", "love", "night"]
    weights = np.arange(len(words) * 4, dtype=np.float64).reshape(len(words), 4) / 10.0
    return EmbeddingTable.from_words(words, weights)


@pytest.fixture
def corpus():
    return make_corpus(n_songs=12, images_per_song=3, layout=TOY_LAYOUT, embedding_dim=8, seed=3)


@pytest.fixture
def corpus_files(corpus, tmp_path):
    return write_corpus(corpus, tmp_path / "corpus")


@pytest.fixture
def featurizer_for(corpus):
    def build(config: ModelConfig, mood_vocab=None):
        return Featurizer(config, corpus.table, corpus.tag_names, mood_vocab=mood_vocab)

    return build
