"""Token-pruned ViT hashing with exact Hamming retrieval."""

from .config import Config
from .hashing import CodeProblem, CodeState, solve
from .pruning import PruneSchedule
from .retrieval import BinaryCodeSet, evaluate, search
from .vit import ModelWeights, ViTConfig, config_for_profile, encode, heads, init_weights

__version__ = "0.1.0"

__all__ = [
    "Config",
    "CodeProblem",
    "CodeState",
    "solve",
    "PruneSchedule",
    "BinaryCodeSet",
    "evaluate",
    "search",
    "ModelWeights",
    "ViTConfig",
    "config_for_profile",
    "encode",
    "heads",
    "init_weights",
]
