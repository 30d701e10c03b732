import json
import logging

import numpy as np
import pytest

from conftest import toy_model_config
from tagsong.checkpoint import (
    Checkpoint,
    checkpoint_from_json,
    checkpoint_to_json,
    decode_array,
    encode_array,
    load_checkpoint,
    save_checkpoint,
)
from tagsong.exceptions import CheckpointError
from tagsong.models import build_model
from tagsong.numerics import Rng
from tagsong.text import EmbeddingTable
from tagsong.training import TrainConfig, train
from tagsong.types import MODEL_KINDS


def trained_checkpoint(kind, corpus, featurizer_for, **overrides):
    config = toy_model_config(kind, **overrides)
    model = build_model(config, Rng(3), corpus.records)
    pairs = featurizer_for(config, getattr(model, "mood_vocab", None)).pairs(corpus.records)
    loss = "mrl" if kind == "attreader" else "cpl"
    train_config = TrainConfig(loss=loss, epochs=1, batch_size=9, seed=4, learning_rate=0.01)
    result = train(pairs, train_config, model)
    return Checkpoint(
        model=model,
        state=result.state,
        epoch=1,
        history=result.history,
        seed=4,
        embedding_checksum=corpus.table.checksum(),
        train_config={"loss": loss},
    )


def test_array_encoding_is_exact(rng):
    array = rng.normal((3, 5)) * 1e-300
    np.testing.assert_array_equal(decode_array(encode_array(array)), array)
    with pytest.raises(CheckpointError):
        decode_array({"shape": [2], "data": "!!"})


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_reload_is_bit_exact(tmp_path, corpus, featurizer_for, kind):
    checkpoint = trained_checkpoint(kind, corpus, featurizer_for)
    path = tmp_path / "model.json"
    save_checkpoint(checkpoint, path)
    loaded = load_checkpoint(path, corpus.table)

    assert loaded.model.kind == kind
    assert loaded.model.config == checkpoint.model.config
    assert loaded.epoch == 1 and loaded.seed == 4
    assert [h.loss for h in loaded.history] == [h.loss for h in checkpoint.history]
    for name, value in checkpoint.model.blocks().items():
        assert loaded.model.blocks()[name].tobytes() == value.tobytes()
    for name, value in checkpoint.state.accumulators.items():
        assert loaded.state.accumulators[name].tobytes() == value.tobytes()

    featurizer = featurizer_for(checkpoint.model.config, getattr(checkpoint.model, "mood_vocab", None))
    pair = featurizer.pairs(corpus.records[:1])[0]
    assert loaded.model.score(pair.image, pair.lyric, pair.mood_id) == checkpoint.model.score(pair.image, pair.lyric, pair.mood_id)


def test_shared_attention_round_trip(tmp_path, corpus, featurizer_for):
    checkpoint = trained_checkpoint("ours-attention", corpus, featurizer_for, share_attention=True)
    save_checkpoint(checkpoint, tmp_path / "model.json")
    loaded = load_checkpoint(tmp_path / "model.json")
    assert loaded.model.params.shared_attention


def test_mood_vocabulary_survives(tmp_path, corpus, featurizer_for):
    checkpoint = trained_checkpoint("ours-mood", corpus, featurizer_for)
    save_checkpoint(checkpoint, tmp_path / "model.json")
    assert load_checkpoint(tmp_path / "model.json").model.mood_vocab == {"calm": 0, "happy": 1, "sad": 2}


def test_same_checkpoint_saves_identical_bytes(tmp_path, corpus, featurizer_for):
    first = trained_checkpoint("ours", corpus, featurizer_for)
    second = trained_checkpoint("ours", corpus, featurizer_for)
    save_checkpoint(first, tmp_path / "a.json")
    save_checkpoint(second, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.json")
    (tmp_path / "bad.json").write_text("{", encoding="utf-8")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.json")


@pytest.mark.parametrize(
    "mutate",
    [
        lambda doc: doc.update(format="something-else"),
        lambda doc: doc.update(version=99),
        lambda doc: doc.update(kind="bow"),
        lambda doc: doc["config"].update(kind="nonsense"),
        lambda doc: doc["blocks"].pop("mlp.0.bias"),
        lambda doc: doc["blocks"].update(extra=encode_array(np.zeros(2))),
        lambda doc: doc["blocks"].update({"mlp.0.bias": encode_array(np.zeros(99))}),
        lambda doc: doc["optimizer"]["accumulators"].pop("fwd.W_i"),
    ],
)
def test_inconsistent_documents(corpus, featurizer_for, mutate):
    doc = json.loads(json.dumps(checkpoint_to_json(trained_checkpoint("ours", corpus, featurizer_for))))
    mutate(doc)
    with pytest.raises(CheckpointError):
        checkpoint_from_json(doc)


def test_bag_of_words_needs_vocabulary(corpus, featurizer_for):
    doc = checkpoint_to_json(trained_checkpoint("bow", corpus, featurizer_for))
    doc["bow_words"] = None
    with pytest.raises(CheckpointError):
        checkpoint_from_json(doc)


def test_checkpoint_without_optimizer_state(corpus, featurizer_for):
    checkpoint = trained_checkpoint("conse", corpus, featurizer_for)
    checkpoint.state = None
    assert checkpoint_from_json(checkpoint_to_json(checkpoint)).state is None


def test_embedding_mismatch_warns(corpus, featurizer_for, caplog):
    doc = checkpoint_to_json(trained_checkpoint("conse", corpus, featurizer_for))
    words = sorted(corpus.table.vocab, key=corpus.table.vocab.get)
    other = EmbeddingTable.from_words(words, corpus.table.weights * 2.0)
    with caplog.at_level(logging.WARNING, logger="tagsong"):
        checkpoint_from_json(doc, other)
    assert "Embedding table differs" in caplog.text
    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="tagsong"):
        checkpoint_from_json(doc, corpus.table)
    assert "Embedding table differs" not in caplog.text
