"""Distillation, region-guidance and classification losses, plus head fitting.

Only the two heads (classification and hash) are trained; the backbone is
frozen, so every gradient here is with respect to head parameters.
Batch arrays are row-per-item: features ``(n, D)``, codes ``(n, k)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, DegenerateInputError, ShapeError
from .linalg import softmax_rows
from .pruning import topk_indices

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    beta: float = 0.1
    sigma: float = 1.0

    def __post_init__(self):
        if self.beta < 0 or self.sigma < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class RegionMask:
    """Per-patch keep mask: 0 at the ``k_masked`` most salient patches, 1 elsewhere."""

    mask: np.ndarray
    k_masked: int
    patch_size: int


def _cosine_parts(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """``(|a||b| - a.b, |a||b|)``, so ``1 - cos`` is their ratio.

    One square root of the product keeps +/-1 codes exact (``sqrt(k * k)``
    is ``k``), and the numerator is then an exact integer.
    """
    na2 = float(a @ a)
    nb2 = float(b @ b)
    if na2 == 0.0 or nb2 == 0.0:
        raise DegenerateInputError("cosine similarity is undefined for a zero vector")
    scale = float(np.sqrt(na2 * nb2))
    return scale - float(a @ b), scale


def dkt_loss(h_e, h_d) -> float:
    """Cosine distance ``1 - cos(h_e, h_d)`` between student and teacher codes."""
    h_e = np.asarray(h_e, dtype=np.float64)
    h_d = np.asarray(h_d, dtype=np.float64)
    if h_e.shape != h_d.shape:
        raise ShapeError(f"code shapes differ: {h_e.shape} vs {h_d.shape}")
    num, den = _cosine_parts(h_e, h_d)
    return num / den


def hamming_from_cosine(h_i, h_j) -> float:
    """Hamming distance estimate ``k/2 * (1 - cos)``; exact for +/-1 vectors."""
    h_i = np.asarray(h_i, dtype=np.float64)
    h_j = np.asarray(h_j, dtype=np.float64)
    k = h_i.shape[-1]
    num, den = _cosine_parts(h_i, h_j)
    # a single rounding: k * num and 2 * den are exact for +/-1 codes
    return k * num / (2.0 * den)


def drg_mask(m_final, k_masked: int, patch_size: int = 16) -> RegionMask:
    values = np.asarray(m_final, dtype=np.float64)
    n = len(values)
    if not 0 <= k_masked <= n:
        raise BoundsError(f"k_masked={k_masked} outside [0, {n}]")
    mask = np.ones(n, dtype=np.uint8)
    mask[topk_indices(values, k_masked)] = 0
    return RegionMask(mask=mask, k_masked=k_masked, patch_size=patch_size)


def apply_mask(image, mask: RegionMask) -> np.ndarray:
    """Zero every pixel (all channels) inside masked patches.

    The mask is laid out row by row over the patch grid, the same order the
    encoder uses for tokens.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    p = mask.patch_size
    if h % p or w % p or (h // p) * (w // p) != len(mask.mask):
        raise ShapeError(f"{len(mask.mask)}-patch mask does not tile a {h}x{w} image with patch {p}")
    grid = mask.mask.reshape(h // p, w // p)
    pixel_mask = np.repeat(np.repeat(grid, p, axis=0), p, axis=1).astype(bool)
    out = image.copy()
    out[~pixel_mask] = 0
    return out


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise BoundsError(f"label {label} outside [0, {logits.shape[-1]})")
    return float(-_log_softmax(logits)[label])


def total_loss(l_hash: float, l_cls: float, l_drg: float, l_dkt: float, w: LossWeights = LossWeights()) -> float:
    return l_hash + w.beta * (l_cls + l_drg) + w.sigma * l_dkt


@dataclass
class HeadParams:
    """Classification head ``(D, C)`` feeding the hash head ``(C, k)``."""

    cls_w: np.ndarray
    cls_b: np.ndarray
    hash_w: np.ndarray
    hash_b: np.ndarray

    NAMES = ("cls_w", "cls_b", "hash_w", "hash_b")
    TENSOR_NAMES = {
        "cls_w": "head.cls.weight",
        "cls_b": "head.cls.bias",
        "hash_w": "head.hash.weight",
        "hash_b": "head.hash.bias",
    }

    @classmethod
    def from_weights(cls, w) -> "HeadParams":
        return cls(**{attr: w[name].copy() for attr, name in cls.TENSOR_NAMES.items()})

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, attr) for attr, name in self.TENSOR_NAMES.items()}

    def copy(self) -> "HeadParams":
        return HeadParams(*(getattr(self, n).copy() for n in self.NAMES))

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        logits = features @ self.cls_w + self.cls_b
        return logits, logits @ self.hash_w + self.hash_b


@dataclass(frozen=True)
class HeadBatch:
    """One full batch for head fitting.

    ``masked_features`` are the encoder outputs for the region-masked images;
    when given, their classification loss enters with weight ``beta``.
    """

    features: np.ndarray
    labels: np.ndarray
    targets: np.ndarray
    teacher: np.ndarray | None = None
    masked_features: np.ndarray | None = None

    def __post_init__(self):
        n = self.features.shape[0]
        if len(self.labels) != n or self.targets.shape[0] != n:
            raise ShapeError("features, labels and targets must have the same item count")
        if self.teacher is not None and self.teacher.shape != self.targets.shape:
            raise ShapeError(f"teacher codes {self.teacher.shape} vs targets {self.targets.shape}")
        if self.masked_features is not None and self.masked_features.shape != self.features.shape:
            raise ShapeError("masked features must match features in shape")


def _ce_terms(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy and its gradient w.r.t. logits."""
    n = len(labels)
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise BoundsError("label outside the classifier's range")
    rows = np.arange(n)
    loss = float(-_log_softmax(logits)[rows, labels].mean())
    grad = softmax_rows(logits)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def _dkt_terms(h: np.ndarray, teacher: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean ``1 - cos`` over rows and its gradient w.r.t. ``h``."""
    hn = np.linalg.norm(h, axis=1, keepdims=True)
    tn = np.linalg.norm(teacher, axis=1, keepdims=True)
    if np.any(hn == 0.0) or np.any(tn == 0.0):
        raise DegenerateInputError("cosine distance is undefined for a zero code")
    cos = np.sum(h * teacher, axis=1, keepdims=True) / (hn * tn)
    grad = -(teacher / (hn * tn) - cos * h / hn**2) / h.shape[0]
    return float(np.mean(1.0 - cos)), grad


def head_loss_terms(params: HeadParams, batch: HeadBatch, w: LossWeights) -> dict[str, float]:
    logits, h = params.forward(batch.features)
    terms = {"hash": float(np.mean((h - batch.targets) ** 2))}
    terms["cls"] = _ce_terms(logits, batch.labels)[0]
    terms["drg"] = 0.0
    if batch.masked_features is not None:
        masked_logits, _ = params.forward(batch.masked_features)
        terms["drg"] = _ce_terms(masked_logits, batch.labels)[0]
    terms["dkt"] = _dkt_terms(h, batch.teacher)[0] if batch.teacher is not None and w.sigma else 0.0
    terms["total"] = total_loss(terms["hash"], terms["cls"], terms["drg"], terms["dkt"], w)
    return terms


def head_gradients(params: HeadParams, batch: HeadBatch, w: LossWeights) -> tuple[float, HeadParams]:
    """Total loss and its analytic gradient w.r.t. every head parameter.

    The hash term is the mean squared error over all ``n * k`` entries, so its
    gradient w.r.t. the hash output is ``2 (h - B) / (n k)``.
    """
    x = batch.features
    n, k = batch.targets.shape
    logits, h = params.forward(x)
    l_hash = float(np.mean((h - batch.targets) ** 2))
    d_h = 2.0 * (h - batch.targets) / (n * k)

    l_dkt = 0.0
    if batch.teacher is not None and w.sigma:
        l_dkt, g_dkt = _dkt_terms(h, batch.teacher)
        d_h = d_h + w.sigma * g_dkt

    l_cls, g_cls = _ce_terms(logits, batch.labels)
    d_logits = d_h @ params.hash_w.T + w.beta * g_cls

    grad = HeadParams(
        cls_w=x.T @ d_logits,
        cls_b=d_logits.sum(axis=0),
        hash_w=logits.T @ d_h,
        hash_b=d_h.sum(axis=0),
    )

    l_drg = 0.0
    if batch.masked_features is not None:
        masked_logits, _ = params.forward(batch.masked_features)
        l_drg, g_drg = _ce_terms(masked_logits, batch.labels)
        grad.cls_w += batch.masked_features.T @ (w.beta * g_drg)
        grad.cls_b += w.beta * g_drg.sum(axis=0)

    return total_loss(l_hash, l_cls, l_drg, l_dkt, w), grad


def fit_heads(
    params: HeadParams,
    batch: HeadBatch,
    w: LossWeights = LossWeights(),
    lr: float = 1e-2,
    steps: int = 500,
) -> tuple[HeadParams, list[float]]:
    """Full-batch gradient descent on the heads.

    Returns the fitted parameters and the loss before each step followed by
    the final loss (``steps + 1`` values).
    """
    params = params.copy()
    trace = []
    for step in range(steps):
        loss, grad = head_gradients(params, batch, w)
        trace.append(loss)
        for name in HeadParams.NAMES:
            setattr(params, name, getattr(params, name) - lr * getattr(grad, name))
        if step % 100 == 0:
            log.debug("fit step %d loss %.6f", step, loss)
    trace.append(head_gradients(params, batch, w)[0])
    return params, trace
