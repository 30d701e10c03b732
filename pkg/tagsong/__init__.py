from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import TagLayout, TripletRecord, filter_triplets, load_triplets, make_split
from .exceptions import TagsongError
from .models import Featurizer, ModelConfig, build_model
from .retrieval import evaluate, median_rank, rank_candidates, recall_at_k
from .text import EmbeddingTable, load_embeddings
from .training import TrainConfig, train

__all__ = [
    "Checkpoint",
    "EmbeddingTable",
    "Featurizer",
    "ModelConfig",
    "TagLayout",
    "TagsongError",
    "TrainConfig",
    "TripletRecord",
    "build_model",
    "evaluate",
    "filter_triplets",
    "load_checkpoint",
    "load_embeddings",
    "load_triplets",
    "make_split",
    "median_rank",
    "rank_candidates",
    "recall_at_k",
    "save_checkpoint",
    "train",
]
