"""EEG artifact tagging, alcoholism classification and magnitude-pruned networks."""

from .config import PipelineConfig
from .dataset import Recording, load_corpus, parse_rd
from .nn import Network, TrainConfig, train
from .prune import PruningSchedule, deserialize, serialize, sparse_forward

__all__ = [
    "PipelineConfig",
    "Recording",
    "load_corpus",
    "parse_rd",
    "Network",
    "TrainConfig",
    "train",
    "PruningSchedule",
    "serialize",
    "deserialize",
    "sparse_forward",
]
__version__ = "0.1.0"
