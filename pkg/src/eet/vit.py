"""Minimal Vision Transformer forward pass with hooks for token pruning.

Row-vector convention throughout: a linear map is ``x @ weight + bias`` with
``weight`` shaped ``(in, out)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ShapeError
from .linalg import Rng, layer_norm, softmax_rows
from .pruning import ImportanceMap, PruneSchedule, importance_from_artifacts, prune
from .tokens import AttentionArtifacts, TokenSequence

LN_EPS = 1e-6


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 224
    patch_size: int = 16
    depth: int = 12
    dim: int = 384
    heads: int = 6
    mlp_ratio: float = 4.0
    num_classes: int = 10
    hash_bits: int = 16
    channels: int = 3

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ShapeError(f"image size {self.image_size} not divisible by patch {self.patch_size}")
        if self.dim % self.heads:
            raise ShapeError(f"dim {self.dim} not divisible by {self.heads} heads")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def mlp_dim(self) -> int:
        return int(round(self.dim * self.mlp_ratio))

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


PROFILES = {
    "small-224": dict(image_size=224, patch_size=16, depth=12, dim=384, heads=6, mlp_ratio=4.0),
    "tiny-32": dict(image_size=32, patch_size=4, depth=12, dim=64, heads=4, mlp_ratio=4.0),
    "micro-16": dict(image_size=16, patch_size=4, depth=12, dim=32, heads=4, mlp_ratio=2.0),
}


def config_for_profile(name: str, **overrides) -> ViTConfig:
    try:
        base = PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown model profile {name!r}; choose from {sorted(PROFILES)}") from None
    return ViTConfig(**{**base, **overrides})


@dataclass(frozen=True)
class LayerWeights:
    heads: int
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


_LAYER_TENSORS = {
    "ln1.gamma": "ln1_gamma",
    "ln1.beta": "ln1_beta",
    "attn.wq": "wq",
    "attn.bq": "bq",
    "attn.wk": "wk",
    "attn.bk": "bk",
    "attn.wv": "wv",
    "attn.bv": "bv",
    "attn.wo": "wo",
    "attn.bo": "bo",
    "ln2.gamma": "ln2_gamma",
    "ln2.beta": "ln2_beta",
    "mlp.w1": "w1",
    "mlp.b1": "b1",
    "mlp.w2": "w2",
    "mlp.b2": "b2",
}


def tensor_shapes(cfg: ViTConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every tensor of a model with this config, in file order."""
    d, m = cfg.dim, cfg.mlp_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (cfg.patch_dim, d),
        "patch_embed.bias": (d,),
        "cls_token": (d,),
        "pos_embed": (cfg.num_patches + 1, d),
    }
    per_layer = {
        "ln1.gamma": (d,),
        "ln1.beta": (d,),
        "attn.wq": (d, d),
        "attn.bq": (d,),
        "attn.wk": (d, d),
        "attn.bk": (d,),
        "attn.wv": (d, d),
        "attn.bv": (d,),
        "attn.wo": (d, d),
        "attn.bo": (d,),
        "ln2.gamma": (d,),
        "ln2.beta": (d,),
        "mlp.w1": (d, m),
        "mlp.b1": (m,),
        "mlp.w2": (m, d),
        "mlp.b2": (d,),
    }
    for i in range(cfg.depth):
        for name, shape in per_layer.items():
            shapes[f"layer.{i}.{name}"] = shape
    shapes.update(
        {
            "norm.gamma": (d,),
            "norm.beta": (d,),
            "head.cls.weight": (d, cfg.num_classes),
            "head.cls.bias": (cfg.num_classes,),
            "head.hash.weight": (cfg.num_classes, cfg.hash_bits),
            "head.hash.bias": (cfg.hash_bits,),
        }
    )
    return shapes


@dataclass
class ModelWeights:
    """Named float64 tensors for one model; validated against ``cfg``."""

    cfg: ViTConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = tensor_shapes(self.cfg)
        missing = set(expected) - set(self.tensors)
        extra = set(self.tensors) - set(expected)
        if missing or extra:
            raise ShapeError(f"weights mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for name, shape in expected.items():
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ShapeError(f"{name} contains non-finite values")
            self.tensors[name] = arr
        self._layers = [self._build_layer(i) for i in range(self.cfg.depth)]

    def _build_layer(self, i: int) -> LayerWeights:
        kwargs = {attr: self.tensors[f"layer.{i}.{name}"] for name, attr in _LAYER_TENSORS.items()}
        return LayerWeights(heads=self.cfg.heads, **kwargs)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def layer(self, i: int) -> LayerWeights:
        """Weights of layer ``i`` (0-based)."""
        return self._layers[i]

    def with_tensors(self, updates: dict[str, np.ndarray]) -> "ModelWeights":
        return ModelWeights(self.cfg, {**self.tensors, **updates})


def init_weights(cfg: ViTConfig, seed: int = 0) -> ModelWeights:
    """Random weights: normal matrices scaled by 1/sqrt(fan_in), zero biases, unit LN."""
    rng = Rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            tensors[name] = np.ones(shape)
        elif leaf == "beta" or (len(shape) == 1 and leaf != "cls_token"):
            tensors[name] = np.zeros(shape)
        elif name in ("cls_token", "pos_embed"):
            tensors[name] = rng.normal(shape, scale=0.02)
        else:
            tensors[name] = rng.normal(shape, scale=1.0 / math.sqrt(shape[0]))
    return ModelWeights(cfg, tensors)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def patch_embed(image, w: ModelWeights, cfg: ViTConfig) -> TokenSequence:
    """Split a normalized ``(H, W, C)`` image into patches and embed them.

    Patches are flattened row by row, each as ``(row, col, channel)``.
    """
    image = np.asarray(image, dtype=np.float64)
    expected = (cfg.image_size, cfg.image_size, cfg.channels)
    if image.shape != expected:
        raise ShapeError(f"image shape {image.shape}, expected {expected}")
    g, p, c = cfg.grid, cfg.patch_size, cfg.channels
    patches = image.reshape(g, p, g, p, c).transpose(0, 2, 1, 3, 4).reshape(g * g, p * p * c)
    embedded = patches @ w["patch_embed.weight"] + w["patch_embed.bias"]
    tokens = np.vstack([w["cls_token"][None, :], embedded]) + w["pos_embed"]
    return TokenSequence(tokens=tokens, alive=np.arange(g * g + 1), layer=0)


def mhsa(seq: TokenSequence, lw: LayerWeights) -> tuple[TokenSequence, AttentionArtifacts]:
    """Pre-LN multi-head self-attention sub-block with its residual."""
    x = seq.tokens
    n, d = x.shape
    h = lw.heads
    dh = d // h
    xn = layer_norm(x, lw.ln1_gamma, lw.ln1_beta, LN_EPS)
    q = (xn @ lw.wq + lw.bq).reshape(n, h, dh).transpose(1, 0, 2)
    k = (xn @ lw.wk + lw.bk).reshape(n, h, dh).transpose(1, 0, 2)
    v = (xn @ lw.wv + lw.bv).reshape(n, h, dh).transpose(1, 0, 2)
    attn = softmax_rows(q @ k.transpose(0, 2, 1) / math.sqrt(dh))
    content = attn @ v
    merged = content.transpose(1, 0, 2).reshape(n, d)
    out = x + merged @ lw.wo + lw.bo
    artifacts = AttentionArtifacts(class_attention=attn[:, 0, 1:], head_content=content)
    return TokenSequence(tokens=out, alive=seq.alive, layer=seq.layer), artifacts


def mlp_block(x: np.ndarray, lw: LayerWeights) -> np.ndarray:
    xn = layer_norm(x, lw.ln2_gamma, lw.ln2_beta, LN_EPS)
    return gelu(xn @ lw.w1 + lw.b1) @ lw.w2 + lw.b2


def forward_layer(seq: TokenSequence, lw: LayerWeights) -> tuple[TokenSequence, AttentionArtifacts]:
    mid, artifacts = mhsa(seq, lw)
    out = mid.tokens + mlp_block(mid.tokens, lw)
    return TokenSequence(tokens=out, alive=seq.alive, layer=seq.layer + 1), artifacts


@dataclass(frozen=True)
class EncodeResult:
    """Output of :func:`encode`.

    embedding: final class token after the terminal LayerNorm.
    importance: length-N map from the last layer, indexed by original patch
        position; pruned patches are 0.
    token_trace: tokens (class included) processed by each of the L layers.
    stage_patches: patch count before the first stage and after each stage.
    alive: original indices of the tokens that reached the last layer.
    """

    embedding: np.ndarray
    importance: np.ndarray
    token_trace: list[int]
    stage_patches: list[int]
    alive: np.ndarray


def encode(image, w: ModelWeights, cfg: ViTConfig, schedule: PruneSchedule | None = None) -> EncodeResult:
    """Run all layers, pruning after each scheduled layer's full block."""
    schedule = schedule or PruneSchedule()
    schedule.check_depth(cfg.depth)
    seq = patch_embed(image, w, cfg)
    trace: list[int] = []
    stages = [seq.patch_count]
    last_map: ImportanceMap | None = None
    map_alive = seq.alive
    for layer in range(1, cfg.depth + 1):
        trace.append(seq.alive_count)
        seq, artifacts = forward_layer(seq, w.layer(layer - 1))
        ratio = schedule.ratio_at(layer)
        if ratio is not None or layer == cfg.depth:
            last_map = importance_from_artifacts(artifacts, layer=layer)
            map_alive = seq.alive
        if ratio is not None:
            seq = prune(seq, last_map, ratio)
            stages.append(seq.patch_count)
    importance = np.zeros(cfg.num_patches)
    importance[map_alive[1:] - 1] = last_map.values
    embedding = layer_norm(seq.tokens[0], w["norm.gamma"], w["norm.beta"], LN_EPS)
    return EncodeResult(
        embedding=embedding,
        importance=importance,
        token_trace=trace,
        stage_patches=stages,
        alive=seq.alive.copy(),
    )


def heads(class_embedding, w: ModelWeights) -> tuple[np.ndarray, np.ndarray]:
    """Classification logits and the real-valued hash output fed by those logits."""
    e = np.asarray(class_embedding, dtype=np.float64)
    if e.shape[-1] != w.cfg.dim:
        raise ShapeError(f"embedding length {e.shape[-1]}, expected {w.cfg.dim}")
    logits = e @ w["head.cls.weight"] + w["head.cls.bias"]
    return logits, logits @ w["head.hash.weight"] + w["head.hash.bias"]
