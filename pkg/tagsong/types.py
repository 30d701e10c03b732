from typing import Dict, List, Literal, Optional, TypedDict

import numpy as np
import numpy.typing as npt

#: Dense float64 array; 2-D for matrices, 1-D for vectors
Matrix = npt.NDArray[np.float64]
Vector = npt.NDArray[np.float64]

#: Named parameter (or gradient) blocks of a model
Blocks = Dict[str, Matrix]

LossKind = Literal["mse", "cpl", "mrl"]
Pooling = Literal["average", "max"]
TagGroup = Literal["obj", "attr", "obj-attr"]
SplitMode = Literal["dagger", "section"]
Direction = Literal["image2song", "song2image"]
ModelKind = Literal["ours", "ours-attention", "ours-mood", "bow", "conse", "attreader"]
ElementwiseOp = Literal["sigmoid", "tanh", "mul", "add"]

LOSS_KINDS = ("mse", "cpl", "mrl")
POOLINGS = ("average", "max")
TAG_GROUPS = ("obj", "attr", "obj-attr")
SPLIT_MODES = ("dagger", "section")
DIRECTIONS = ("image2song", "song2image")
MODEL_KINDS = ("ours", "ours-attention", "ours-mood", "bow", "conse", "attreader")


class TripletJson(TypedDict):
    id: str
    song_id: str
    lyric: str
    tags: List[float]
    mood: Optional[str]
    favorite_count: int


class SplitJson(TypedDict):
    mode: str
    seed: int
    train: List[str]
    test: List[str]


class DirectionReport(TypedDict):
    direction: str
    queries: int
    gallery: int
    recall: Dict[str, float]
    median_rank: float
    per_song: Dict[str, float]


class MetricsReport(TypedDict):
    model: str
    mode: str
    tag_group: str
    seed: int
    directions: List[DirectionReport]
