from typing import Any, Dict, List, Optional, TypedDict


class PrepareSummary(TypedDict):
    mode: str
    seed: int
    loaded: int
    triplets: int
    songs: int
    train: int
    test: int
    train_songs: int
    test_songs: int
    favorites: Dict[str, int]
    split_path: str
    filtered_path: str


class EpochEntry(TypedDict):
    epoch: int
    loss: float


class TrainSummary(TypedDict):
    model: str
    loss: str
    seed: int
    start_epoch: int
    epoch: int
    final_loss: Optional[float]
    history: List[EpochEntry]
    checkpoint: str
    train_config: Dict[str, Any]
    model_config: Dict[str, Any]


class RetrievalHit(TypedDict):
    rank: int
    id: str
    score: float


class StatsEntry(TypedDict):
    dim: int
    name: Optional[str]
    mean: float


class CompareRow(TypedDict):
    model: str
    tag_group: str
    direction: str
    recall: Dict[str, float]
    median_rank: float
