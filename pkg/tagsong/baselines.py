"""Comparison lyric encoders: tf-idf bag of words, averaged word vectors, and softmax attentive pooling."""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .const import DEFAULT_BOW_VOCAB
from .encoder import (
    AttentionParams,
    DirectionCache,
    LstmParams,
    MlpLayer,
    backprop_direction,
    mlp_backward,
    mlp_blocks,
    mlp_forward,
    run_direction,
)
from .exceptions import EmptyLyricError, ShapeError
from .numerics import Rng, assert_finite, glorot_uniform, sigmoid
from .types import Blocks, Matrix, Vector

logger = logging.getLogger(__name__)


# Bag of words


@dataclass
class BowModel:
    vocab: Dict[str, int]
    idf: Vector
    weight: Matrix
    bias: Vector

    def blocks(self) -> Blocks:
        return {"bow.weight": self.weight, "bow.bias": self.bias}


def build_bow_vocab(documents: Sequence[Sequence[str]], cap: int = DEFAULT_BOW_VOCAB) -> Tuple[Dict[str, int], Vector]:
    """Vocabulary of the ``cap`` most frequent words (ties alphabetical) and their ``ln(N/df)`` weights."""
    if not documents:
        raise EmptyLyricError("no training lyrics to build a vocabulary from")
    frequency: Counter = Counter()
    doc_freq: Counter = Counter()
    for words in documents:
        frequency.update(words)
        doc_freq.update(set(words))
    ranked = sorted(frequency, key=lambda w: (-frequency[w], w))[:cap]
    vocab = {word: n for n, word in enumerate(ranked)}
    n_docs = len(documents)
    idf = np.array([math.log(n_docs / doc_freq[word]) for word in ranked], dtype=np.float64)
    return vocab, idf


def init_bow_model(rng: Rng, vocab: Dict[str, int], idf: Vector, output_dim: int) -> BowModel:
    return BowModel(vocab=vocab, idf=idf, weight=glorot_uniform(rng, output_dim, len(vocab)), bias=np.zeros(output_dim))


def bow_features(tokens: Sequence[str], model: BowModel) -> Vector:
    """tf-idf vector with tf = count / lyric length; words outside the vocabulary are ignored."""
    counts = Counter(word for word in tokens if word in model.vocab)
    if not counts:
        raise EmptyLyricError("no lyric word is in the bag-of-words vocabulary")
    features = np.zeros(len(model.vocab))
    for word, count in counts.items():
        n = model.vocab[word]
        features[n] = count / len(tokens) * model.idf[n]
    return features


def bow_forward(model: BowModel, features: Vector) -> Vector:
    out = model.weight @ features + model.bias
    assert_finite(out, "bag-of-words projection")
    return out


def bow_backward(features: Vector, d_output: Vector) -> Blocks:
    return {"bow.weight": np.outer(d_output, features), "bow.bias": d_output.copy()}


# Averaged word vectors


@dataclass
class PoolModel:
    mlp: List[MlpLayer]

    def blocks(self) -> Blocks:
        return mlp_blocks(self.mlp, "pool_mlp")


def conse_encode(embedded: Matrix) -> Vector:
    if embedded.ndim != 2 or embedded.shape[0] == 0:
        raise EmptyLyricError("cannot pool an empty lyric")
    return embedded.mean(axis=0)


# Attentive reader


@dataclass
class AttReaderModel:
    fwd: LstmParams
    bwd: LstmParams
    att: AttentionParams
    combiner: List[MlpLayer]

    @property
    def hidden_size(self) -> int:
        return self.fwd.hidden_size

    def blocks(self) -> Blocks:
        return {
            **self.fwd.blocks("fwd"),
            **self.bwd.blocks("bwd"),
            **self.att.blocks("att"),
            **mlp_blocks(self.combiner, "combiner"),
        }


@dataclass
class AttReaderCache:
    fwd: DirectionCache
    bwd: DirectionCache
    outputs: Matrix
    m: Matrix
    weights: Vector
    v_tilde: Vector
    combiner_activations: List[Vector] = field(default_factory=list)


def _softmax(scores: Vector) -> Vector:
    e = np.exp(scores - scores.max())
    return e / e.sum()


def attreader_forward(model: AttReaderModel, embedded: Matrix, v_tilde: Vector) -> Tuple[Vector, AttReaderCache]:
    """Plain bi-LSTM, then softmax-weighted pooling of the concatenated per-word outputs."""
    if embedded.ndim != 2 or embedded.shape[0] == 0:
        raise EmptyLyricError("cannot encode an empty lyric")
    if v_tilde.shape != (model.att.W_vm.shape[1],):
        raise ShapeError(f"tag attention vector must be ({model.att.W_vm.shape[1]},), got {v_tilde.shape}")
    fwd_out, fwd_cache = run_direction(model.fwd, None, embedded)
    bwd_out, bwd_cache = run_direction(model.bwd, None, embedded[::-1])
    outputs = np.concatenate([fwd_out, bwd_out[::-1]], axis=1)
    m = sigmoid(outputs @ model.att.W_hm.T + model.att.W_vm @ v_tilde)
    weights = _softmax(m @ model.att.w_ms)
    pooled = weights @ outputs
    assert_finite(pooled, "attentive pooling")
    return pooled, AttReaderCache(fwd=fwd_cache, bwd=bwd_cache, outputs=outputs, m=m, weights=weights, v_tilde=v_tilde)


def attreader_encode(model: AttReaderModel, embedded: Matrix, v_tilde: Vector) -> Vector:
    return attreader_forward(model, embedded, v_tilde)[0]


def attreader_backward(model: AttReaderModel, cache: AttReaderCache, d_pooled: Vector) -> Blocks:
    outputs, m, weights = cache.outputs, cache.m, cache.weights
    d_outputs = np.outer(weights, d_pooled)
    d_weights = outputs @ d_pooled
    d_scores = weights * (d_weights - weights @ d_weights)
    dz = np.outer(d_scores, model.att.w_ms) * m * (1.0 - m)
    grads: Blocks = {
        "att.W_hm": dz.T @ outputs,
        "att.W_vm": np.outer(dz.sum(axis=0), cache.v_tilde),
        "att.w_ms": d_scores @ m,
    }
    d_outputs += dz @ model.att.W_hm

    hidden = model.hidden_size
    grads.update(backprop_direction(model.fwd, None, cache.fwd, d_outputs[:, :hidden], "fwd"))
    grads.update(backprop_direction(model.bwd, None, cache.bwd, d_outputs[::-1, hidden:], "bwd"))
    return grads


def attreader_score(model: AttReaderModel, tag_vec: Vector, pooled: Vector) -> Tuple[float, List[Vector]]:
    """Relevance of an image/lyric pair: MLP over the tag vector joined with the pooled lyric."""
    out, activations = mlp_forward(model.combiner, np.concatenate([tag_vec, pooled]), final="linear")
    return float(out[0]), activations


def attreader_score_backward(model: AttReaderModel, activations: List[Vector], d_score: float) -> Tuple[Blocks, Vector]:
    """Gradients of the combiner and of the pooled lyric vector."""
    grads, d_input = mlp_backward(model.combiner, activations, np.array([d_score]), "combiner", final="linear")
    return grads, d_input[-2 * model.hidden_size:]
