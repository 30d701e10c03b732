import functools
import hashlib
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from .const import DEFAULT_MAX_LEN, EMBEDDING_DIM
from .exceptions import EmptyLyricError, ParameterError, SchemaError, TagsongIndexError, TagsongParseError
from .numerics import assert_finite
from .types import Matrix, Vector

logger = logging.getLogger(__name__)

STOPWORDS_PATH = Path(__file__).parent / "data" / "stopwords.txt"

_NON_ALNUM = re.compile(r"[^0-9a-z]")


@functools.lru_cache(maxsize=None)
def load_stopwords(path: Union[str, Path] = STOPWORDS_PATH) -> FrozenSet[str]:
    """One word per line, UTF-8; blank lines and ``#`` comments ignored."""
    words = set()
    with open(path, "r", encoding="utf-8") as file:
        for line in file:
            word = line.strip().lower()
            if word and not word.startswith("#"):
                words.add(word)
    return frozenset(words)


def tokenize(raw: str) -> List[str]:
    return _NON_ALNUM.sub(" ", raw.lower()).split()


def preprocess_lyric(raw: str, stopwords: Optional[FrozenSet[str]] = None) -> List[str]:
    """Lowercase, blank out every non-alphanumeric character, split, drop stop words."""
    if stopwords is None:
        stopwords = load_stopwords()
    words = [word for word in tokenize(raw) if word not in stopwords]
    if not words:
        raise EmptyLyricError("lyric is empty after removing non-alphanumerics and stop words")
    return words


@dataclass(frozen=True)
class EmbeddingTable:
    """Frozen word-vector table; row ``vocab[word]`` of ``weights`` is the word's vector."""

    vocab: Dict[str, int]
    weights: Matrix

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.vocab):
            raise SchemaError(f"embedding weights {self.weights.shape} do not match a vocabulary of {len(self.vocab)}")
        assert_finite(self.weights, "embedding table")
        self.weights.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, word: str) -> bool:
        return word in self.vocab

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for word in sorted(self.vocab, key=self.vocab.__getitem__):
            digest.update(word.encode("utf-8"))
            digest.update(b"\0")
        digest.update(np.ascontiguousarray(self.weights, dtype="<f8").tobytes())
        return digest.hexdigest()

    @classmethod
    def from_words(cls, words: Sequence[str], weights: Matrix) -> "EmbeddingTable":
        vocab: Dict[str, int] = {}
        for word in words:
            if word in vocab:
                raise SchemaError(f"duplicate word '{word}'")
            vocab[word] = len(vocab)
        return cls(vocab=vocab, weights=np.array(weights, dtype=np.float64))


@dataclass(frozen=True)
class TokenSequence:
    tokens: Tuple[int, ...]
    source_len: int

    def __post_init__(self):
        if not self.tokens:
            raise EmptyLyricError("token sequence is empty")

    def __len__(self) -> int:
        return len(self.tokens)


def load_embeddings(path: Union[str, Path], expected_dim: int = EMBEDDING_DIM) -> EmbeddingTable:
    """Read a word2vec text file: a ``V dim`` header, then ``word v1 ... v_dim`` per line."""
    vocab: Dict[str, int] = {}
    rows: List[List[float]] = []
    with open(path, "r", encoding="utf-8") as file:
        header = file.readline().split()
        if len(header) != 2:
            raise TagsongParseError("header must be 'V dim'", path, 1)
        try:
            declared, dim = int(header[0]), int(header[1])
        except ValueError:
            raise TagsongParseError(f"non-integer header '{' '.join(header)}'", path, 1) from None
        if dim != expected_dim:
            raise TagsongParseError(f"embedding dimension {dim} does not match configured {expected_dim}", path, 1)

        seen = 0
        for line_no, line in enumerate(file, start=2):
            parts = line.split()
            if not parts:
                continue
            seen += 1
            word, values = parts[0], parts[1:]
            if len(values) != dim:
                raise TagsongParseError(f"expected {dim} values for '{word}', found {len(values)}", path, line_no)
            try:
                vector = [float(v) for v in values]
            except ValueError:
                raise TagsongParseError(f"non-numeric value in vector for '{word}'", path, line_no) from None
            if not np.all(np.isfinite(vector)):
                raise TagsongParseError(f"non-finite value in vector for '{word}'", path, line_no)
            if word in vocab:
                logger.warning(f"{path}:{line_no}: duplicate word '{word}' ignored, first occurrence kept")
                continue
            vocab[word] = len(rows)
            rows.append(vector)

    if seen != declared:
        raise TagsongParseError(f"header declares {declared} words but file has {seen}", path, 1)
    weights = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    logger.info(f"Loaded {len(vocab)} embeddings of dimension {dim} from {path}")
    return EmbeddingTable(vocab=vocab, weights=weights)


def tokens_to_embedding_ids(words: Sequence[str], table: EmbeddingTable, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    """Map words to table rows, dropping out-of-vocabulary words and keeping the first ``max_len``."""
    if max_len < 1:
        raise ParameterError(f"max_len must be at least 1, got {max_len}")
    ids = [table.vocab[word] for word in words if word in table.vocab]
    if not ids:
        raise EmptyLyricError(f"all {len(words)} lyric words are out of vocabulary")
    return TokenSequence(tokens=tuple(ids[:max_len]), source_len=len(words))


def lyric_to_sequence(
    raw: str,
    table: EmbeddingTable,
    max_len: int = DEFAULT_MAX_LEN,
    stopwords: Optional[FrozenSet[str]] = None,
) -> TokenSequence:
    return tokens_to_embedding_ids(preprocess_lyric(raw, stopwords), table, max_len)


def embed_tokens(seq: Union[TokenSequence, Sequence[int]], table: EmbeddingTable) -> Matrix:
    """Row lookup, equal to multiplying the one-hot token matrix by the table."""
    tokens = seq.tokens if isinstance(seq, TokenSequence) else tuple(seq)
    for token in tokens:
        if not 0 <= token < len(table):
            raise TagsongIndexError(f"token id {token} outside vocabulary of {len(table)}")
    return np.array(table.weights[list(tokens)], dtype=np.float64)


def embed_phrase(phrase: str, table: EmbeddingTable) -> Vector:
    """Mean of the in-vocabulary word vectors of a (possibly multi-word) name; zero if none."""
    ids = [table.vocab[word] for word in tokenize(phrase.replace("_", " ")) if word in table.vocab]
    if not ids:
        return np.zeros(table.dim, dtype=np.float64)
    return table.weights[ids].mean(axis=0)


def load_tag_names(path: Union[str, Path], expected: int) -> List[str]:
    """One tag name per line; line i names tag dimension i."""
    with open(path, "r", encoding="utf-8") as file:
        names = [line.strip() for line in file if line.strip()]
    if len(names) != expected:
        raise SchemaError(f"expected {expected} tag names, found {len(names)}", path)
    return names
