"""Seeded synthetic retrieval datasets.

Every class gets a template made of one random RGB colour per patch cell;
items are the template plus Gaussian pixel noise, quantized to 8 bits.
Teacher codes are the per-class majority codes of the optimized binary
codes for the training labels, with independent random bit flips.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .config import Config
from .hashing import CodeProblem, solve
from .linalg import Rng


@dataclass(frozen=True)
class SynthPaths:
    root: Path
    train_manifest: Path
    query_manifest: Path
    teacher: Path


def class_templates(n_classes: int, image_size: int, patch_size: int, rng: Rng) -> np.ndarray:
    grid = image_size // patch_size
    cells = rng.uniform((n_classes, grid, grid, 3))
    return np.repeat(np.repeat(cells, patch_size, axis=1), patch_size, axis=2)


def render(template: np.ndarray, noise: float, rng: Rng) -> np.ndarray:
    pixels = template + noise * rng.normal(template.shape) if noise > 0 else template
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def teacher_codes(labels: np.ndarray, b: np.ndarray, flip_prob: float, rng: Rng) -> np.ndarray:
    """(n, k) +/-1 teacher codes from class majority codes of ``b`` (k x n)."""
    n_classes = int(labels.max()) + 1
    centroids = np.stack([np.where(b[:, labels == c].sum(axis=1) > 0, 1.0, -1.0) for c in range(n_classes)])
    codes = centroids[labels]
    flips = rng.uniform(codes.shape) < flip_prob
    return np.where(flips, -codes, codes)


def generate(config: Config, out_dir) -> SynthPaths:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    cfg = config.vit_config()
    n_classes = config["synth.classes"]
    rng = Rng(config["synth.seed"])
    templates = class_templates(n_classes, cfg.image_size, cfg.patch_size, rng)
    noise = config["synth.noise"]

    def write_split(split: str, per_class: int) -> Path:
        entries = []
        for c in range(n_classes):
            for j in range(per_class):
                rel = f"images/{split}_{c:03d}_{j:04d}.ppm"
                io.write_ppm(out / rel, render(templates[c], noise, rng))
                entries.append((rel, c))
        path = out / f"{split}.csv"
        io.write_manifest(path, entries)
        return path

    train = write_split("train", config["synth.per_class"])
    query = write_split("query", config["synth.queries_per_class"])

    labels = np.repeat(np.arange(n_classes), config["synth.per_class"])
    problem = CodeProblem.from_labels(
        labels, n_classes, k=config["hash.bits"], alpha=config["hash.alpha"],
        max_iters=config["hash.max_iters"], tol=config["hash.tol"],
    )
    b = solve(problem, seed=config["hash.seed"]).b
    teacher = out / "teacher.eetc"
    io.write_matrix(teacher, teacher_codes(labels, b, config["synth.flip_prob"], rng))
    return SynthPaths(root=out, train_manifest=train, query_manifest=query, teacher=teacher)
