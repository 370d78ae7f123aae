"""Flat ``key = value`` configuration with documented defaults.

Lines starting with ``#`` are comments. Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError
from .losses import LossWeights
from .pruning import PruneSchedule
from .vit import ViTConfig, config_for_profile


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default, description)
SCHEMA: dict[str, tuple] = {
    "model.profile": (str, "small-224", "backbone profile: small-224, tiny-32 or micro-16"),
    "model.num_classes": (int, 10, "classes C of the classification head"),
    "model.seed": (int, 0, "seed for random weight initialization"),
    "hash.bits": (int, 16, "code length k"),
    "hash.alpha": (float, 1.0, "quantization weight alpha of the code objective"),
    "hash.max_iters": (int, 50, "alternating-optimization iteration cap"),
    "hash.tol": (float, 1e-7, "relative objective change that stops the optimizer"),
    "hash.seed": (int, 0, "seed for the initial relaxed codes"),
    "prune.stages": (str, "4:0.5,8:0.5,10:0.25", "layer:keep_ratio stages; empty disables pruning"),
    "loss.beta": (float, 0.1, "weight of the classification and region-guidance terms"),
    "loss.sigma": (float, 1.0, "weight of the distillation term"),
    "drg.k_masked": (int, 4, "patches zeroed in region-guidance images (0 disables)"),
    "fit.lr": (float, 1e-2, "head fitting learning rate"),
    "fit.steps": (int, 500, "full-batch gradient steps for head fitting"),
    "eval.q_cutoff": (int, 0, "ranks scored by AP; 0 means the whole database"),
    "eval.exclude_self": (_bool, False, "drop query i from its own ranking"),
    "eval.ap_normalizer": (str, "retrieved", "AP denominator: retrieved (within cutoff) or all"),
    "synth.classes": (int, 10, "synthetic class count"),
    "synth.per_class": (int, 20, "synthetic training items per class"),
    "synth.queries_per_class": (int, 5, "synthetic query items per class"),
    "synth.noise": (float, 0.05, "pixel noise standard deviation"),
    "synth.flip_prob": (float, 0.1, "per-bit flip probability of teacher codes"),
    "synth.seed": (int, 0, "seed for synthetic data"),
    "profile.runs": (int, 100, "timed forward passes per configuration"),
}


@dataclass
class Config:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {key: spec[1] for key, spec in SCHEMA.items()}
        for key, value in self.values.items():
            merged[key] = self._coerce(key, value)
        self.values = merged

    @staticmethod
    def _coerce(key: str, value):
        if key not in SCHEMA:
            raise FormatError(f"unknown config key {key!r}")
        if not isinstance(value, str):
            return value
        try:
            return SCHEMA[key][0](value.strip())
        except ValueError as exc:
            raise FormatError(f"{key}: {exc}") from None

    @classmethod
    def parse(cls, text: str) -> "Config":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        return cls(values)

    @classmethod
    def load(cls, path) -> "Config":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def with_overrides(self, overrides: dict) -> "Config":
        return Config({**self.values, **overrides})

    def __getitem__(self, key: str):
        return self.values[key]

    def dump(self) -> str:
        lines = []
        for key, (_, _, doc) in SCHEMA.items():
            lines.append(f"# {doc}")
            lines.append(f"{key} = {self.values[key]}")
        return "\n".join(lines) + "\n"

    # convenience builders

    def vit_config(self) -> ViTConfig:
        return config_for_profile(
            self["model.profile"], num_classes=self["model.num_classes"], hash_bits=self["hash.bits"]
        )

    def schedule(self) -> PruneSchedule:
        return PruneSchedule.parse(self["prune.stages"])

    def loss_weights(self) -> LossWeights:
        return LossWeights(beta=self["loss.beta"], sigma=self["loss.sigma"])
