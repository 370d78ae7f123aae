"""Token containers shared by the encoder and the pruning stage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class TokenSequence:
    """Token embeddings plus the original indices of the tokens still alive.

    ``alive[0]`` is always 0 (the class token); indices are strictly
    increasing and ``len(alive) == tokens.shape[0]``.
    """

    tokens: np.ndarray
    alive: np.ndarray
    layer: int = 0

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ShapeError(f"tokens must be 2-D, got {self.tokens.shape}")
        if len(self.alive) != self.tokens.shape[0]:
            raise ShapeError(f"{len(self.alive)} alive indices for {self.tokens.shape[0]} tokens")
        if len(self.alive) == 0 or self.alive[0] != 0:
            raise ShapeError("class token (index 0) must lead the alive list")
        if np.any(np.diff(self.alive) <= 0):
            raise ShapeError("alive indices must be strictly increasing")

    @property
    def alive_count(self) -> int:
        return self.tokens.shape[0]

    @property
    def patch_count(self) -> int:
        return self.tokens.shape[0] - 1


@dataclass(frozen=True)
class AttentionArtifacts:
    """Per-head quantities captured inside one MHSA block.

    class_attention: (H, alive_count - 1) softmax weights of the class-token
        query over the patch keys. The softmax is taken over all alive keys,
        class key included, and the class column is then dropped.
    head_content: (H, alive_count, D_h) attention-weighted values per head,
        before the output projection.
    """

    class_attention: np.ndarray
    head_content: np.ndarray
