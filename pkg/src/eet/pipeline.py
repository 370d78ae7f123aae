"""Command implementations shared by the CLI and the tests."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io, synth
from .config import Config
from .hashing import CodeProblem, solve
from .losses import HeadBatch, HeadParams, apply_mask, drg_mask, fit_heads, head_loss_terms
from .profile import ProfileReport, profile
from .pruning import PruneSchedule
from .retrieval import BinaryCodeSet, EvalResult, evaluate
from .vit import ModelWeights, encode, heads, init_weights

log = logging.getLogger(__name__)


def thread_count() -> int:
    value = os.environ.get("EET_THREADS")
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def load_or_init_weights(config: Config, weights_path=None) -> ModelWeights:
    cfg = config.vit_config()
    if weights_path:
        return io.load_weights(weights_path, cfg)
    return init_weights(cfg, config["model.seed"])


def cmd_profile(config: Config, runs: int | None = None) -> ProfileReport:
    runs = config["profile.runs"] if runs is None else runs
    return profile(config.vit_config(), config.schedule(), runs=runs, seed=config["model.seed"])


def cmd_synth(config: Config, out_dir) -> synth.SynthPaths:
    return synth.generate(config, out_dir)


@dataclass
class EncodeOutput:
    features: np.ndarray
    hash_outputs: np.ndarray
    codes: BinaryCodeSet
    masked_features: np.ndarray | None
    failures: list[tuple[str, str]] = field(default_factory=list)


def encode_image(image, weights: ModelWeights, schedule: PruneSchedule, k_masked: int):
    """Class embedding of one image, plus that of its region-masked copy.

    The mask comes from the last-layer importance map of the unpruned model.
    """
    cfg = weights.cfg
    embedding = encode(image, weights, cfg, schedule).embedding
    if k_masked <= 0:
        return embedding, None
    teacher_map = encode(image, weights, cfg, PruneSchedule()).importance
    mask = drg_mask(teacher_map, k_masked, cfg.patch_size)
    masked = encode(apply_mask(image, mask), weights, cfg, schedule).embedding
    return embedding, masked


def cmd_encode(config: Config, manifest_path, out_dir, weights_path=None, with_masked: bool = True) -> EncodeOutput:
    """Encode every manifest image; unreadable items are recorded and skipped."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = io.read_manifest(manifest_path)
    weights = load_or_init_weights(config, weights_path)
    schedule = config.schedule()
    k_masked = config["drg.k_masked"] if with_masked else 0

    def work(i: int):
        try:
            return encode_image(io.load_image(manifest.path(i)), weights, schedule, k_masked)
        except Exception as exc:  # record-and-continue
            return exc

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        results = list(pool.map(work, range(len(manifest))))

    feats, masked, labels, failures = [], [], [], []
    for i, res in enumerate(results):
        if isinstance(res, Exception):
            failures.append((manifest.entries[i][0], f"{type(res).__name__}: {res}"))
            log.warning("failed to encode %s: %s", manifest.entries[i][0], res)
            continue
        feats.append(res[0])
        masked.append(res[1])
        labels.append(manifest.entries[i][1])

    cfg = weights.cfg
    features = np.array(feats).reshape(len(feats), cfg.dim)
    _, hash_out = heads(features, weights)
    hash_out = hash_out.reshape(len(feats), cfg.hash_bits)
    codes = BinaryCodeSet.from_real(hash_out, np.array(labels, dtype=np.int64)) if feats else BinaryCodeSet(
        cfg.hash_bits, np.zeros((0, (cfg.hash_bits + 7) // 8), np.uint8), np.zeros(0, np.int64)
    )
    masked_features = np.array(masked).reshape(len(feats), cfg.dim) if k_masked > 0 else None

    io.write_matrix(out / "features.eetc", features)
    io.write_matrix(out / "hash.eetc", hash_out)
    io.write_codes(out / "codes.eetb", codes)
    if masked_features is not None:
        io.write_matrix(out / "masked_features.eetc", masked_features)
    io.write_csv(out / "failures.csv", ["path", "error"], failures)
    return EncodeOutput(features, hash_out, codes, masked_features, failures)


def cmd_optimize_codes(config: Config, manifest_path, out_dir) -> BinaryCodeSet:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = io.read_manifest(manifest_path).labels
    problem = CodeProblem.from_labels(
        labels, config["model.num_classes"], k=config["hash.bits"], alpha=config["hash.alpha"],
        max_iters=config["hash.max_iters"], tol=config["hash.tol"],
    )
    state = solve(problem, seed=config["hash.seed"])
    codes = BinaryCodeSet.from_real(state.b.T, labels)
    io.write_codes(out / "codes.eetb", codes)
    io.write_csv(out / "trace.csv", ["iter", "objective"], enumerate(state.objective_trace))
    return codes


@dataclass(frozen=True)
class FitReport:
    loss_trace: list[float]
    terms: dict[str, float]
    bit_error_rate: float


def cmd_fit_heads(
    config: Config, features_path, codes_path, out_path, teacher_path=None, masked_path=None, weights_path=None
) -> FitReport:
    """Fit both heads against the optimized codes; writes the updated weights file."""
    weights = load_or_init_weights(config, weights_path)
    db = io.read_codes(codes_path)
    features = io.read_matrix(features_path)
    batch = HeadBatch(
        features=features,
        labels=db.labels,
        targets=db.signs(),
        teacher=io.read_matrix(teacher_path) if teacher_path else None,
        masked_features=io.read_matrix(masked_path) if masked_path else None,
    )
    lw = config.loss_weights()
    params, trace = fit_heads(HeadParams.from_weights(weights), batch, lw, config["fit.lr"], config["fit.steps"])
    fitted = weights.with_tensors(params.to_tensors())
    io.save_weights(out_path, fitted)
    # score with the float32-rounded weights that were written
    reloaded = HeadParams.from_weights(io.load_weights(out_path, weights.cfg))
    _, h = reloaded.forward(features)
    ber = float(np.mean(np.where(h > 0, 1.0, -1.0) != batch.targets))
    io.write_csv(Path(out_path).with_suffix(".loss.csv"), ["step", "loss"], enumerate(trace))
    return FitReport(loss_trace=trace, terms=head_loss_terms(reloaded, batch, lw), bit_error_rate=ber)


def cmd_eval(config: Config, queries_path, db_path, pr_out=None, raw_out=None) -> EvalResult:
    result = evaluate(
        io.read_codes(queries_path),
        io.read_codes(db_path),
        q_cutoff=config["eval.q_cutoff"] or None,
        exclude_self=config["eval.exclude_self"],
        normalizer=config["eval.ap_normalizer"],
    )
    if pr_out:
        io.write_csv(pr_out, ["recall", "precision"], result.pr_curve.tolist())
    if raw_out:
        io.write_csv(raw_out, ["recall", "precision"], result.pr_raw.tolist())
    return result


def format_map(value: float) -> str:
    return f"{value:.4f}"


@dataclass(frozen=True)
class PipelineResult:
    map: float
    fit: FitReport
    paths: dict[str, Path]


def run_pipeline(config: Config, out_dir) -> PipelineResult:
    """synth -> encode -> optimize-codes -> fit-heads -> encode queries -> eval."""
    out = Path(out_dir)
    data = cmd_synth(config, out / "data")
    cmd_encode(config, data.train_manifest, out / "train")
    cmd_optimize_codes(config, data.train_manifest, out / "codes")
    masked = out / "train" / "masked_features.eetc"
    fit = cmd_fit_heads(
        config,
        out / "train" / "features.eetc",
        out / "codes" / "codes.eetb",
        out / "heads.eetw",
        teacher_path=data.teacher,
        masked_path=masked if masked.exists() else None,
    )
    cmd_encode(config, data.query_manifest, out / "query", weights_path=out / "heads.eetw", with_masked=False)
    result = cmd_eval(config, out / "query" / "codes.eetb", out / "codes" / "codes.eetb", pr_out=out / "pr.csv")
    (out / "map.txt").write_text(format_map(result.map) + "\n")
    paths = {
        "db_codes": out / "codes" / "codes.eetb",
        "query_codes": out / "query" / "codes.eetb",
        "weights": out / "heads.eetw",
        "pr": out / "pr.csv",
    }
    return PipelineResult(map=result.map, fit=fit, paths=paths)
