"""Analytic cost model and wall-clock timing of the encoder.

Costs count multiply-accumulates of the matmuls only (QKV, attention scores,
attention-weighted values, output projection, the two MLP layers, and the
patch projection); softmax, LayerNorm, GELU and residual adds are ignored.
One multiply-accumulate is reported as one FLOP, the convention used by
published ViT cost tables (ViT-Small at 224px comes out near 4.6 GFLOPs).
``flops_x2`` gives the same count with a MAC as two FLOPs.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .linalg import Rng
from .pruning import PruneSchedule, kept_count
from .vit import ViTConfig, encode, init_weights


def layer_macs(tokens: int, cfg: ViTConfig) -> dict[str, int]:
    n, d = tokens, cfg.dim
    return {
        "qkv": 3 * n * d * d,
        "scores": n * n * d,
        "values": n * n * d,
        "proj": n * d * d,
        "mlp": 2 * n * d * cfg.mlp_dim,
    }


def patch_embed_macs(cfg: ViTConfig) -> int:
    return cfg.num_patches * cfg.patch_dim * cfg.dim


def head_macs(cfg: ViTConfig) -> int:
    return cfg.dim * cfg.num_classes + cfg.num_classes * cfg.hash_bits


def token_trace(cfg: ViTConfig, schedule: PruneSchedule | None = None) -> list[int]:
    """Tokens (class token included) entering each of the ``depth`` layers."""
    schedule = schedule or PruneSchedule()
    schedule.check_depth(cfg.depth)
    patches = cfg.num_patches
    trace = []
    for layer in range(1, cfg.depth + 1):
        trace.append(patches + 1)
        ratio = schedule.ratio_at(layer)
        if ratio is not None:
            patches = kept_count(patches, ratio)
    return trace


def encoder_macs(cfg: ViTConfig, schedule: PruneSchedule | None = None) -> int:
    total = patch_embed_macs(cfg)
    for n in token_trace(cfg, schedule):
        total += sum(layer_macs(n, cfg).values())
    return total


@dataclass(frozen=True)
class ProfileReport:
    trace_full: list[int]
    trace_pruned: list[int]
    macs_full: int
    macs_pruned: int
    head_macs: int
    latency_full: float | None = None
    latency_pruned: float | None = None

    @property
    def gflops_full(self) -> float:
        return self.macs_full / 1e9

    @property
    def gflops_pruned(self) -> float:
        return self.macs_pruned / 1e9

    @property
    def flops_ratio(self) -> float:
        return self.macs_pruned / self.macs_full

    @property
    def latency_ratio(self) -> float | None:
        if self.latency_full is None or self.latency_pruned is None:
            return None
        return self.latency_pruned / self.latency_full

    def lines(self) -> list[str]:
        out = [
            f"tokens per layer (no pruning): {'->'.join(map(str, self.trace_full))}",
            f"tokens per layer (pruned):     {'->'.join(map(str, self.trace_pruned))}",
            f"encoder GFLOPs (MAC count): full {self.gflops_full:.3f}, pruned {self.gflops_pruned:.3f}",
            f"encoder GFLOPs (2 x MAC):   full {2 * self.gflops_full:.3f}, pruned {2 * self.gflops_pruned:.3f}",
            f"FLOPs ratio pruned/full: {self.flops_ratio:.4f}",
            f"head MACs (reported separately): {self.head_macs}",
        ]
        if self.latency_ratio is not None:
            out.append(
                f"median latency: full {1e3 * self.latency_full:.2f} ms, "
                f"pruned {1e3 * self.latency_pruned:.2f} ms, ratio {self.latency_ratio:.4f}"
            )
        return out


def measure_latency(
    cfg: ViTConfig, schedule: PruneSchedule, runs: int = 100, seed: int = 0, warmup: int = 3
) -> tuple[float, float]:
    """Median seconds per image for the full and the pruned encoder.

    Runs alternate between the two so drift in machine load hits both.
    """
    weights = init_weights(cfg, seed)
    image = Rng(seed + 1).normal((cfg.image_size, cfg.image_size, cfg.channels))
    empty = PruneSchedule()
    for _ in range(warmup):
        encode(image, weights, cfg, empty)
        encode(image, weights, cfg, schedule)
    full, pruned = [], []
    for _ in range(runs):
        t0 = time.perf_counter()
        encode(image, weights, cfg, empty)
        t1 = time.perf_counter()
        encode(image, weights, cfg, schedule)
        t2 = time.perf_counter()
        full.append(t1 - t0)
        pruned.append(t2 - t1)
    return statistics.median(full), statistics.median(pruned)


def profile(cfg: ViTConfig, schedule: PruneSchedule, runs: int = 0, seed: int = 0) -> ProfileReport:
    """Cost report; wall-clock timing is included when ``runs > 0``."""
    latency = measure_latency(cfg, schedule, runs, seed) if runs > 0 else (None, None)
    return ProfileReport(
        trace_full=token_trace(cfg),
        trace_pruned=token_trace(cfg, schedule),
        macs_full=encoder_macs(cfg),
        macs_pruned=encoder_macs(cfg, schedule),
        head_macs=head_macs(cfg),
        latency_full=latency[0],
        latency_pruned=latency[1],
    )
