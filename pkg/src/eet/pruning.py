"""Content-based token pruning.

Each head's importance for a token is the l2 norm of the content that head
produced for it. Normalizing those norms across heads gives per-token head
weights, which mix the per-head class-attention rows into one importance
map. The top fraction of patch tokens under that map survives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import PreconditionError, ShapeError
from .tokens import AttentionArtifacts, TokenSequence

__all__ = [
    "PruneSchedule",
    "ImportanceMap",
    "kept_count",
    "topk_indices",
    "content_importance",
    "head_weights",
    "token_importance",
    "importance_from_artifacts",
    "prune",
]

# absorbs binary rounding in ratio * count, e.g. 0.29 * 100
_FLOOR_GUARD = 1e-9


@dataclass(frozen=True)
class PruneSchedule:
    """Ordered ``(layer, keep_ratio)`` stages; layers are 1-based."""

    stages: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        stages = tuple((int(layer), float(ratio)) for layer, ratio in self.stages)
        object.__setattr__(self, "stages", stages)
        prev = 0
        for layer, ratio in stages:
            if layer <= prev:
                raise PreconditionError("prune stages must have strictly increasing layers >= 1")
            if not 0.0 < ratio <= 1.0:
                raise PreconditionError(f"keep ratio {ratio} outside (0, 1]")
            prev = layer

    @classmethod
    def default(cls) -> "PruneSchedule":
        return cls(((4, 0.5), (8, 0.5), (10, 0.25)))

    @classmethod
    def parse(cls, text: str) -> "PruneSchedule":
        """Parse ``"4:0.5,8:1/2,10:0.25"``; an empty string means no pruning."""
        text = text.strip()
        if not text or text.lower() == "none":
            return cls(())
        stages = []
        for item in text.split(","):
            try:
                layer, ratio = item.split(":")
                stages.append((int(layer), float(Fraction(ratio.strip()))))
            except ValueError as exc:
                raise PreconditionError(f"bad prune stage {item!r}") from exc
        return cls(tuple(stages))

    def format(self) -> str:
        return ",".join(f"{layer}:{ratio:g}" for layer, ratio in self.stages)

    def check_depth(self, depth: int) -> None:
        if self.stages and self.stages[-1][0] > depth:
            raise PreconditionError(f"prune layer {self.stages[-1][0]} exceeds depth {depth}")

    def ratio_at(self, layer: int) -> float | None:
        for stage_layer, ratio in self.stages:
            if stage_layer == layer:
                return ratio
        return None

    def __bool__(self) -> bool:
        return bool(self.stages)


@dataclass(frozen=True)
class ImportanceMap:
    """Importance of every alive patch token (class token excluded)."""

    values: np.ndarray
    layer: int = 0


def kept_count(patches: int, keep_ratio: float) -> int:
    """Number of patch tokens kept: ``floor(keep_ratio * patches)``, at least 1."""
    if not 0.0 < keep_ratio <= 1.0:
        raise PreconditionError(f"keep ratio {keep_ratio} outside (0, 1]")
    if patches < 1:
        raise PreconditionError("no patch tokens left to prune")
    return max(1, min(patches, math.floor(keep_ratio * patches + _FLOOR_GUARD)))


def topk_indices(values, k: int) -> np.ndarray:
    """Positions of the ``k`` largest values, ties to the lower position.

    Returned in ascending position order.
    """
    values = np.asarray(values, dtype=np.float64)
    order = np.lexsort((np.arange(len(values)), -values))
    return np.sort(order[:k])


def content_importance(artifacts: AttentionArtifacts) -> np.ndarray:
    """(H, alive_count) l2 norms of each head's content per token."""
    return np.linalg.norm(artifacts.head_content, axis=-1)


def head_weights(s) -> np.ndarray:
    """Normalize importance over heads for each token.

    Tokens whose column sums to zero get uniform weights ``1/H``.
    """
    s = np.asarray(s, dtype=np.float64)
    n_heads = s.shape[0]
    totals = s.sum(axis=0, keepdims=True)
    safe = np.where(totals > 0.0, totals, 1.0)
    return np.where(totals > 0.0, s / safe, 1.0 / n_heads)


def token_importance(weights, class_attention, layer: int = 0) -> ImportanceMap:
    """Head-weighted sum of class attention, ``M[i] = sum_h W[h, i] * A[h, i]``.

    ``weights`` must already be restricted to the patch columns.
    """
    weights = np.asarray(weights, dtype=np.float64)
    class_attention = np.asarray(class_attention, dtype=np.float64)
    if weights.shape != class_attention.shape:
        raise ShapeError(f"head weights {weights.shape} vs class attention {class_attention.shape}")
    return ImportanceMap(values=np.einsum("hi,hi->i", weights, class_attention), layer=layer)


def importance_from_artifacts(artifacts: AttentionArtifacts, layer: int = 0) -> ImportanceMap:
    w = head_weights(content_importance(artifacts))
    return token_importance(w[:, 1:], artifacts.class_attention, layer=layer)


def prune(seq: TokenSequence, m: ImportanceMap, keep_ratio: float) -> TokenSequence:
    """Keep the class token and the top ``kept_count`` patch tokens under ``m``.

    Survivors keep their relative order.
    """
    patches = seq.patch_count
    if patches < 1:
        raise PreconditionError("cannot prune a sequence without patch tokens")
    if len(m.values) != patches:
        raise ShapeError(f"importance map has {len(m.values)} entries for {patches} patches")
    k = kept_count(patches, keep_ratio)
    rows = np.concatenate(([0], topk_indices(m.values, k) + 1))
    return TokenSequence(tokens=seq.tokens[rows], alive=seq.alive[rows], layer=seq.layer)
