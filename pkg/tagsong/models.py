"""Uniform wrappers over the six model kinds, and the featurizer that turns records into model inputs.

Every wrapper exposes ``blocks()`` (live parameter arrays by name),
``forward(image, lyric, mood_id) -> (output, cache)``, ``backward(cache, d_output)``
and ``score(image, lyric, mood_id)``. Embedding models output a vector in tag
space and are scored by cosine similarity; the attentive reader outputs a
single relevance score.
"""
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import (
    AttReaderModel,
    BowModel,
    PoolModel,
    attreader_backward,
    attreader_forward,
    attreader_score,
    attreader_score_backward,
    bow_backward,
    bow_features,
    bow_forward,
    build_bow_vocab,
    conse_encode,
    init_bow_model,
)
from .const import (
    DEFAULT_ATTENTION,
    DEFAULT_BOW_VOCAB,
    DEFAULT_HIDDEN,
    DEFAULT_K_TAGS,
    DEFAULT_MAX_LEN,
    DEFAULT_MLP_HIDDEN,
    EMBEDDING_DIM,
    N_ATTRIBUTES,
    N_OBJECTS,
)
from .dataset import TagLayout, TripletRecord, build_mood_vocab, group_by_song
from .encoder import (
    AttentionParams,
    EncoderConfig,
    EncoderParams,
    LstmParams,
    encoder_backward,
    encoder_forward,
    init_encoder_params,
    init_mlp,
    mlp_backward,
    mlp_forward,
    pool_tags,
    tag_embedding_matrix,
)
from .exceptions import ConfigError, EmptyLyricError
from .numerics import Rng
from .text import EmbeddingTable, TokenSequence, embed_tokens, load_stopwords, preprocess_lyric, tokens_to_embedding_ids
from .types import MODEL_KINDS, POOLINGS, TAG_GROUPS, Blocks, Matrix, ModelKind, Pooling, TagGroup, Vector
from .training import cosine_with_grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind = "ours"
    tag_group: TagGroup = "obj-attr"
    hidden_size: int = DEFAULT_HIDDEN
    attention_size: int = DEFAULT_ATTENTION
    mlp_hidden: Tuple[int, ...] = (DEFAULT_MLP_HIDDEN,)
    k_tags: int = DEFAULT_K_TAGS
    pooling: Pooling = "average"
    share_attention: bool = False
    embedding_dim: int = EMBEDDING_DIM
    max_len: int = DEFAULT_MAX_LEN
    bow_vocab: int = DEFAULT_BOW_VOCAB
    n_objects: int = N_OBJECTS
    n_attributes: int = N_ATTRIBUTES

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind '{self.kind}'")
        if self.tag_group not in TAG_GROUPS:
            raise ConfigError(f"unknown tag group '{self.tag_group}'")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling '{self.pooling}'")

    @property
    def layout(self) -> TagLayout:
        return TagLayout(self.n_objects, self.n_attributes)

    @property
    def output_dim(self) -> int:
        return self.layout.group_dim(self.tag_group)

    @property
    def uses_attention(self) -> bool:
        return self.kind in ("ours-attention", "attreader")

    @property
    def uses_mood(self) -> bool:
        return self.kind == "ours-mood"

    def to_json(self) -> dict:
        out = {name: getattr(self, name) for name in self.__dataclass_fields__}
        out["mlp_hidden"] = list(self.mlp_hidden)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        obj["mlp_hidden"] = tuple(obj.get("mlp_hidden", ()))
        return cls(**obj)


# Model inputs


@dataclass
class ImageItem:
    id: str
    song_id: str
    tags: Vector
    v_tilde: Vector


@dataclass
class LyricItem:
    song_id: str
    words: List[str]
    tokens: TokenSequence
    embedded: Matrix


@dataclass
class TrainingPair:
    image: ImageItem
    lyric: LyricItem
    mood_id: Optional[int]


class Featurizer:
    """Turns records into ``ImageItem``/``LyricItem`` inputs for one model configuration."""

    def __init__(
        self,
        config: ModelConfig,
        table: EmbeddingTable,
        tag_names: Sequence[str],
        mood_vocab: Optional[Dict[str, int]] = None,
        stopwords: Optional[FrozenSet[str]] = None,
    ):
        self.config = config
        self.table = table
        self.layout = config.layout
        self.indices = self.layout.group_indices(config.tag_group)
        self.tag_matrix = tag_embedding_matrix([tag_names[n] for n in self.indices], table)
        self.mood_vocab = mood_vocab or {}
        self.stopwords = stopwords if stopwords is not None else load_stopwords()
        self._lyrics: Dict[str, LyricItem] = {}

    def image(self, record: TripletRecord) -> ImageItem:
        tags = np.array(record.tags[self.indices], dtype=np.float64)
        v_tilde = pool_tags(tags, self.config.k_tags, self.config.pooling, self.tag_matrix)
        return ImageItem(id=record.id, song_id=record.song_id, tags=tags, v_tilde=v_tilde)

    def lyric(self, song_id: str, raw: str) -> LyricItem:
        item = self._lyrics.get(song_id)
        if item is None:
            words = preprocess_lyric(raw, self.stopwords)
            tokens = tokens_to_embedding_ids(words, self.table, self.config.max_len)
            item = LyricItem(song_id=song_id, words=words, tokens=tokens, embedded=embed_tokens(tokens, self.table))
            self._lyrics[song_id] = item
        return item

    def mood_id(self, mood: Optional[str]) -> Optional[int]:
        if not self.config.uses_mood or mood is None:
            return None
        return self.mood_vocab.get(mood)

    def pairs(self, records: Sequence[TripletRecord]) -> List[TrainingPair]:
        """One pair per record; records whose lyric has no usable words are skipped with a warning."""
        pairs = []
        for record in records:
            try:
                lyric = self.lyric(record.song_id, record.lyric_raw)
            except EmptyLyricError as ex:
                logger.warning(f"Skipping triplet {record.id}: {ex}")
                continue
            pairs.append(TrainingPair(image=self.image(record), lyric=lyric, mood_id=self.mood_id(record.mood)))
        return pairs

    def gallery(self, records: Sequence[TripletRecord]) -> Tuple[List[ImageItem], List[LyricItem], Dict[str, Optional[int]]]:
        """Test images, one lyric per song, and each song's most common mood among ``records``."""
        images: List[ImageItem] = []
        lyrics: List[LyricItem] = []
        moods: Dict[str, Optional[int]] = {}
        for song_id, group in group_by_song(records).items():
            try:
                lyric = self.lyric(song_id, group[0].lyric_raw)
            except EmptyLyricError as ex:
                logger.warning(f"Dropping song {song_id} from the gallery: {ex}")
                continue
            lyrics.append(lyric)
            images.extend(self.image(record) for record in group)
            counts = Counter(r.mood for r in group if r.mood is not None)
            modal = min(counts, key=lambda m: (-counts[m], m)) if counts else None
            moods[song_id] = self.mood_id(modal)
        return images, lyrics, moods


# Wrappers


class RetrievalModel:
    kind: ModelKind
    scoring = False

    def __init__(self, config: ModelConfig):
        self.config = config
        self.kind = config.kind

    @property
    def conditioned(self) -> bool:
        """True when the lyric side depends on the query image."""
        return self.config.uses_attention

    def blocks(self) -> Blocks:
        raise NotImplementedError

    def forward(self, image: ImageItem, lyric: LyricItem, mood_id: Optional[int] = None):
        raise NotImplementedError

    def backward(self, cache, d_output: Vector) -> Blocks:
        raise NotImplementedError

    def predict(self, lyric: LyricItem, image: Optional[ImageItem] = None, mood_id: Optional[int] = None) -> Vector:
        return self.forward(image, lyric, mood_id)[0]

    def score(self, image: ImageItem, lyric: LyricItem, mood_id: Optional[int] = None) -> float:
        cos, _ = cosine_with_grad(image.tags, self.predict(lyric, image, mood_id))
        return cos

    def extra_state(self) -> dict:
        return {}


class EncoderModel(RetrievalModel):
    """The bi-LSTM encoder, with or without tag attention and mood."""

    def __init__(self, config: ModelConfig, params: EncoderParams, mood_vocab: Optional[Dict[str, int]] = None):
        super().__init__(config)
        self.params = params
        self.mood_vocab = dict(mood_vocab or {})

    def blocks(self) -> Blocks:
        return self.params.blocks()

    def forward(self, image, lyric, mood_id=None):
        v_tilde = image.v_tilde if self.params.attention else None
        return encoder_forward(self.params, lyric.embedded, v_tilde, mood_id)

    def backward(self, cache, d_output):
        return encoder_backward(self.params, cache, d_output)

    def extra_state(self) -> dict:
        return {"mood_vocab": self.mood_vocab}


class BowRetrievalModel(RetrievalModel):
    def __init__(self, config: ModelConfig, bow: BowModel):
        super().__init__(config)
        self.bow = bow

    def blocks(self):
        return self.bow.blocks()

    def forward(self, image, lyric, mood_id=None):
        try:
            features = bow_features(lyric.words, self.bow)
        except EmptyLyricError:
            logger.debug(f"No vocabulary word in the lyric of song {lyric.song_id}; projecting the bias only")
            features = np.zeros(len(self.bow.vocab))
        return bow_forward(self.bow, features), features

    def backward(self, cache, d_output):
        return bow_backward(cache, d_output)

    def extra_state(self) -> dict:
        words = sorted(self.bow.vocab, key=self.bow.vocab.__getitem__)
        return {"bow_words": words, "bow_idf": self.bow.idf}


class ConseModel(RetrievalModel):
    def __init__(self, config: ModelConfig, pool: PoolModel):
        super().__init__(config)
        self.pool = pool

    def blocks(self):
        return self.pool.blocks()

    def forward(self, image, lyric, mood_id=None):
        return mlp_forward(self.pool.mlp, conse_encode(lyric.embedded))

    def backward(self, cache, d_output):
        grads, _ = mlp_backward(self.pool.mlp, cache, d_output, "pool_mlp")
        return grads


class AttReaderRetrievalModel(RetrievalModel):
    scoring = True

    def __init__(self, config: ModelConfig, reader: AttReaderModel):
        super().__init__(config)
        self.reader = reader

    def blocks(self):
        return self.reader.blocks()

    def forward(self, image, lyric, mood_id=None):
        pooled, cache = attreader_forward(self.reader, lyric.embedded, image.v_tilde)
        score, activations = attreader_score(self.reader, image.tags, pooled)
        cache.combiner_activations = activations
        return np.array([score]), cache

    def backward(self, cache, d_output):
        grads, d_pooled = attreader_score_backward(self.reader, cache.combiner_activations, float(d_output[0]))
        grads.update(attreader_backward(self.reader, cache, d_pooled))
        return grads

    def predict(self, lyric, image=None, mood_id=None):
        return attreader_forward(self.reader, lyric.embedded, image.v_tilde)[0]

    def score(self, image, lyric, mood_id=None):
        return float(self.forward(image, lyric, mood_id)[0][0])


def _bow_vocab(records: Sequence[TripletRecord], cap: int, stopwords: Optional[FrozenSet[str]]) -> Tuple[Dict[str, int], Vector]:
    stopwords = stopwords if stopwords is not None else load_stopwords()
    documents = []
    for group in group_by_song(records).values():
        try:
            documents.append(preprocess_lyric(group[0].lyric_raw, stopwords))
        except EmptyLyricError:
            continue
    return build_bow_vocab(documents, cap)


def build_model(
    config: ModelConfig,
    rng: Rng,
    train_records: Sequence[TripletRecord] = (),
    stopwords: Optional[FrozenSet[str]] = None,
    mood_vocab: Optional[Dict[str, int]] = None,
    bow_vocab: Optional[Tuple[Dict[str, int], Vector]] = None,
) -> RetrievalModel:
    """Freshly initialised model.

    Vocabularies (moods, bag of words) come from ``train_records`` unless given
    explicitly, as they are when a checkpoint is restored.
    """
    output_dim = config.output_dim
    if config.kind in ("ours", "ours-attention", "ours-mood"):
        if mood_vocab is None:
            mood_vocab = build_mood_vocab(train_records) if config.uses_mood else {}
        if config.uses_mood and not mood_vocab:
            logger.warning("No moods in the training split; the mood table has a single unused row")
        enc = EncoderConfig(
            embedding_dim=config.embedding_dim,
            hidden_size=config.hidden_size,
            attention_size=config.attention_size,
            mlp_hidden=config.mlp_hidden,
            output_dim=output_dim,
            attention=config.kind == "ours-attention",
            share_attention=config.share_attention,
            n_moods=max(len(mood_vocab), 1) if config.uses_mood else 0,
        )
        return EncoderModel(config, init_encoder_params(enc, rng), mood_vocab)
    if config.kind == "bow":
        vocab, idf = bow_vocab if bow_vocab is not None else _bow_vocab(train_records, config.bow_vocab, stopwords)
        return BowRetrievalModel(config, init_bow_model(rng, vocab, idf, output_dim))
    if config.kind == "conse":
        return ConseModel(config, PoolModel(init_mlp(rng, [config.embedding_dim, *config.mlp_hidden, output_dim])))
    reader = AttReaderModel(
        fwd=LstmParams.init(rng, config.hidden_size, config.embedding_dim),
        bwd=LstmParams.init(rng, config.hidden_size, config.embedding_dim),
        att=AttentionParams.init(rng, config.attention_size, 2 * config.hidden_size, config.embedding_dim),
        combiner=init_mlp(rng, [output_dim + 2 * config.hidden_size, *config.mlp_hidden, 1]),
    )
    return AttReaderRetrievalModel(config, reader)
