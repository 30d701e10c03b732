"""tagsong constants"""
from logging import Logger, getLogger

LOGGER: Logger = getLogger(__package__)

EMBEDDING_DIM = 300
N_OBJECTS = 266
N_ATTRIBUTES = 249
TAG_DIM = N_OBJECTS + N_ATTRIBUTES

DEFAULT_MAX_LEN = 500
DEFAULT_HIDDEN = 128
DEFAULT_ATTENTION = 128
DEFAULT_MLP_HIDDEN = 512
DEFAULT_K_TAGS = 5
DEFAULT_BOW_VOCAB = 5000

DEFAULT_LEARNING_RATE = 0.001
DEFAULT_RHO = 0.9
DEFAULT_EPSILON = 1e-8
DEFAULT_BATCH = 100
DEFAULT_CLIP_NORM = 5.0

FORGET_BIAS = 1.0
TAG_TOLERANCE = 1e-6

DAGGER_RECALL_KS = (1, 5, 10)
SECTION_RECALL_KS = (10, 50, 100)
